use std::io::Write;
use std::path::Path;

use super::actor::Trajectory;
use super::nets::{softmax, AgentNets, AgentParams};
use crate::autodiff::Tensor;
use crate::envs::{write_observation, Action, GridLayout, NUM_ACTIONS};
use crate::error::{Error, Result};

/// Running counts of how the manager spends its choices.
#[derive(Clone, Debug, PartialEq)]
pub struct UsageCounts {
    pub options: usize,
    /// Manager picks per choice index.
    pub picks: Vec<u64>,
    /// Steps spent inside options.
    pub option_steps: u64,
    pub total_steps: u64,
}

/// Summary of [`UsageCounts`].
#[derive(Clone, Debug, PartialEq)]
pub struct UsageStats {
    /// Fraction of manager picks per choice; all zeros before any pick.
    pub histogram: Vec<f64>,
    /// Steps per option invocation; `None` when no option was picked.
    pub mean_option_len: Option<f64>,
    /// Fraction of environment steps spent inside options.
    pub option_step_frac: f64,
    /// Fraction of manager picks that were options.
    pub option_pick_frac: f64,
}

impl UsageCounts {
    pub fn new(options: usize, actions: usize) -> Self {
        UsageCounts {
            options,
            picks: vec![0; options + actions],
            option_steps: 0,
            total_steps: 0,
        }
    }

    /// Adds one step: its active choice and whether the manager picked it
    /// at this step.
    pub fn record(&mut self, choice: usize, decided: bool) {
        if decided {
            self.picks[choice] += 1;
        }
        if choice < self.options {
            self.option_steps += 1;
        }
        self.total_steps += 1;
    }

    pub fn add(&mut self, tr: &Trajectory) {
        for s in 0..tr.len() {
            self.record(tr.choice[s], tr.decision[s]);
        }
    }

    pub fn stats(&self) -> UsageStats {
        let total_picks: u64 = self.picks.iter().sum();
        let option_picks: u64 = self.picks[..self.options].iter().sum();
        let frac = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        UsageStats {
            histogram: self.picks.iter().map(|&c| frac(c, total_picks)).collect(),
            mean_option_len: (option_picks > 0)
                .then(|| self.option_steps as f64 / option_picks as f64),
            option_step_frac: frac(self.option_steps, self.total_steps),
            option_pick_frac: frac(option_picks, total_picks),
        }
    }
}

/// Greedy action and termination probability of one option at one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct MapCell {
    pub option: usize,
    pub x: usize,
    pub y: usize,
    pub action: usize,
    pub prob: f64,
    /// `None` for fixed-duration options.
    pub beta: Option<f64>,
}

/// Evaluates every option at every open cell of `layout`.
pub fn option_map(
    nets: &AgentNets,
    params: &AgentParams,
    layout: &GridLayout,
) -> Result<Vec<MapCell>> {
    let (Some(net), Some(ps)) = (&nets.option_policy, &params.option_policy) else {
        return Err(Error::InvalidArgument("agent has no options".into()));
    };
    let cells = layout.open_cells();
    let ol = nets.option_obs_len();
    if 2 * layout.width() * layout.height() != ol {
        return Err(Error::Config(
            "layout does not match the network input size".into(),
        ));
    }
    let mut obs = vec![0.0; cells.len() * ol];
    for (r, &c) in cells.iter().enumerate() {
        write_observation(layout, c, None, &mut obs[r * ol..(r + 1) * ol]);
    }
    let x = Tensor::new(vec![cells.len(), ol], obs)?;
    let (logits, _) = AgentNets::option_eval(net, ps, x.clone())?;
    let betas = match (&nets.option_termination, &params.option_termination) {
        (Some(n), Some(p)) => Some(AgentNets::option_eval(n, p, x)?.0),
        _ => None,
    };
    let a = nets.actions;
    let mut out = Vec::with_capacity(nets.options * cells.len());
    for o in 0..nets.options {
        for (r, &c) in cells.iter().enumerate() {
            let probs = softmax(&logits.row(r)[o * a..(o + 1) * a]);
            let (best, &p) = probs
                .iter()
                .enumerate()
                .fold((0, &f64::NEG_INFINITY), |acc, cur| {
                    if cur.1 > acc.1 {
                        cur
                    } else {
                        acc
                    }
                });
            out.push(MapCell {
                option: o,
                x: c.x,
                y: c.y,
                action: best,
                prob: p,
                beta: betas.as_ref().map(|b| b.row(r)[o]),
            });
        }
    }
    Ok(out)
}

pub fn write_option_map_csv(path: &Path, cells: &[MapCell]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("option,x,y,action,arrow,prob,beta\n");
    for c in cells {
        let arrow = Action::from_index(c.action)
            .map(|a| a.arrow())
            .unwrap_or('?');
        let beta = c.beta.map(|b| b.to_string()).unwrap_or_default();
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.option, c.x, c.y, c.action, arrow, c.prob, beta
        ));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// One panel per option: walls dark, arrows for the greedy action, cell
/// shading by termination probability.
pub fn option_map_svg(layout: &GridLayout, cells: &[MapCell], options: usize) -> String {
    const S: usize = 24;
    let (w, h) = (layout.width(), layout.height());
    let panel = w * S + S;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\">\n",
        panel * options.max(1),
        h * S + 2 * S
    );
    for o in 0..options {
        let ox = o * panel;
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"14\">option {}</text>\n",
            ox + 2,
            S - 6,
            o
        ));
        for y in 0..h {
            for x in 0..w {
                if layout.walls()[y * w + x] {
                    svg.push_str(&format!(
                        "<rect x=\"{}\" y=\"{}\" width=\"{S}\" height=\"{S}\" fill=\"#333\"/>\n",
                        ox + x * S,
                        S + y * S
                    ));
                }
            }
        }
        for c in cells.iter().filter(|c| c.option == o) {
            let (px, py) = (ox + c.x * S, S + c.y * S);
            let shade = c.beta.unwrap_or(0.0).clamp(0.0, 1.0);
            svg.push_str(&format!(
                "<rect x=\"{px}\" y=\"{py}\" width=\"{S}\" height=\"{S}\" fill=\"rgb(255,{g},{g})\" stroke=\"#ccc\"/>\n",
                g = (255.0 * (1.0 - shade)).round() as u8
            ));
            let (cx, cy) = (px as f64 + S as f64 / 2.0, py as f64 + S as f64 / 2.0);
            let (dx, dy) = match Action::from_index(c.action) {
                Ok(a) => {
                    let d = a.delta();
                    (d.0 as f64, d.1 as f64)
                }
                Err(_) => (0.0, 0.0),
            };
            let len = S as f64 * 0.35;
            svg.push_str(&format!(
                "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#000\" stroke-width=\"2\"/>\n",
                cx - dx * len,
                cy - dy * len,
                cx + dx * len,
                cy + dy * len
            ));
            svg.push_str(&format!(
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"2.5\" fill=\"#000\"/>\n",
                cx + dx * len,
                cy + dy * len
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Bar chart of a choice histogram: options first, then primitive actions.
pub fn usage_svg(histogram: &[f64], options: usize) -> String {
    const BAR: usize = 36;
    const HEIGHT: f64 = 200.0;
    let n = histogram.len();
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\">\n",
        n * BAR + 40,
        HEIGHT as usize + 60
    );
    svg.push_str(&format!(
        "<line x1=\"20\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"#000\"/>\n",
        HEIGHT + 20.0,
        n * BAR + 30
    ));
    for (i, &v) in histogram.iter().enumerate() {
        let hgt = HEIGHT * v.clamp(0.0, 1.0);
        let x = 25 + i * BAR;
        let (fill, label) = if i < options {
            ("#4c72b0", format!("o{i}"))
        } else {
            let a = i - options;
            let arrow = if a < NUM_ACTIONS {
                Action::from_index(a).map(|a| a.arrow()).unwrap_or('?')
            } else {
                '?'
            };
            ("#dd8452", arrow.to_string())
        };
        svg.push_str(&format!(
            "<rect x=\"{x}\" y=\"{:.2}\" width=\"{}\" height=\"{hgt:.2}\" fill=\"{fill}\"/>\n",
            HEIGHT + 20.0 - hgt,
            BAR - 6
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\">{}</text>\n",
            x + 6,
            HEIGHT as usize + 36,
            label
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.2}\" font-size=\"10\">{:.2}</text>\n",
            x,
            HEIGHT + 16.0 - hgt,
            v
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

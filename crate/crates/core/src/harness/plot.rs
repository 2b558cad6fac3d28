use std::fmt::Write;

/// Mean curve over seeds with the min-max range, one point per row index.
#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    pub frames: Vec<f64>,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub count: Vec<usize>,
}

impl Band {
    /// `series` holds `(frames, values)` per seed; rows are aligned by index
    /// and truncated to the shortest series. Missing values are skipped.
    pub fn from_series(series: &[(Vec<f64>, Vec<f64>)]) -> Band {
        let n = series
            .iter()
            .map(|s| s.0.len().min(s.1.len()))
            .min()
            .unwrap_or(0);
        let mut b = Band {
            frames: Vec::with_capacity(n),
            mean: Vec::with_capacity(n),
            lo: Vec::with_capacity(n),
            hi: Vec::with_capacity(n),
            count: Vec::with_capacity(n),
        };
        for i in 0..n {
            let vals: Vec<f64> = series
                .iter()
                .map(|s| s.1[i])
                .filter(|v| !v.is_nan())
                .collect();
            b.frames
                .push(series.iter().map(|s| s.0[i]).sum::<f64>() / series.len() as f64);
            b.count.push(vals.len());
            if vals.is_empty() {
                b.mean.push(f64::NAN);
                b.lo.push(f64::NAN);
                b.hi.push(f64::NAN);
            } else {
                b.mean.push(vals.iter().sum::<f64>() / vals.len() as f64);
                b.lo.push(vals.iter().cloned().fold(f64::INFINITY, f64::min));
                b.hi.push(vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            }
        }
        b
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("frames,mean,lo,hi,seeds\n");
        let cell = |x: f64| {
            if x.is_nan() {
                String::new()
            } else {
                format!("{x}")
            }
        };
        for i in 0..self.frames.len() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                self.frames[i],
                cell(self.mean[i]),
                cell(self.lo[i]),
                cell(self.hi[i]),
                self.count[i]
            );
        }
        s
    }
}

/// Line plot of one or more labelled bands with shaded ranges. The x axis
/// spans `[0, x_max]`.
pub fn curve_svg(bands: &[(String, Band)], x_max: f64, y_label: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const L: f64 = 60.0;
    const R: f64 = 20.0;
    const T: f64 = 20.0;
    const B: f64 = 50.0;
    const COLORS: [&str; 6] = [
        "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860",
    ];
    let finite = |v: &Vec<f64>| {
        v.iter()
            .copied()
            .filter(|x| x.is_finite())
            .collect::<Vec<_>>()
    };
    let mut ys: Vec<f64> = Vec::new();
    for (_, b) in bands {
        ys.extend(finite(&b.lo));
        ys.extend(finite(&b.hi));
    }
    let mut y_min = ys.iter().cloned().fold(0.0f64, f64::min);
    let mut y_max = ys.iter().cloned().fold(0.0f64, f64::max);
    if y_max - y_min < 1e-12 {
        y_max = y_min + 1.0;
    }
    let pad = 0.05 * (y_max - y_min);
    y_min -= pad;
    y_max += pad;
    let x_max = if x_max > 0.0 { x_max } else { 1.0 };
    let px = |x: f64| L + (W - L - R) * x / x_max;
    let py = |y: f64| T + (H - T - B) * (1.0 - (y - y_min) / (y_max - y_min));

    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(
        s,
        "<rect x=\"{L}\" y=\"{T}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#000\"/>",
        W - L - R,
        H - T - B
    );
    for i in 0..=4 {
        let fx = x_max * i as f64 / 4.0;
        let fy = y_min + (y_max - y_min) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            px(fx),
            H - B + 16.0,
            fx
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{:.3}</text>",
            L - 4.0,
            py(fy) + 4.0,
            fy
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">frames</text>",
        (L + W - R) / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{0}\" transform=\"rotate(-90 14 {0})\" text-anchor=\"middle\">{1}</text>",
        (T + H - B) / 2.0,
        y_label
    );
    for (k, (label, b)) in bands.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let idx: Vec<usize> = (0..b.frames.len())
            .filter(|&i| b.mean[i].is_finite())
            .collect();
        if idx.is_empty() {
            continue;
        }
        let mut area = String::new();
        for &i in &idx {
            let _ = write!(area, "{:.2},{:.2} ", px(b.frames[i]), py(b.hi[i]));
        }
        for &i in idx.iter().rev() {
            let _ = write!(area, "{:.2},{:.2} ", px(b.frames[i]), py(b.lo[i]));
        }
        let _ = writeln!(
            s,
            "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.25\" stroke=\"none\"/>",
            area.trim_end()
        );
        let line: Vec<String> = idx
            .iter()
            .map(|&i| format!("{:.2},{:.2}", px(b.frames[i]), py(b.mean[i])))
            .collect();
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            line.join(" ")
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{label}</text>",
            L + 8.0,
            T + 16.0 + 14.0 * k as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

//! Minimal raster plotting: scatter and line charts rendered to RGB images
//! with a built-in 5x7 bitmap font.

use crate::preprocess::ImageU8;

pub type Rgb = [u8; 3];

pub const WHITE: Rgb = [255, 255, 255];
pub const BLACK: Rgb = [0, 0, 0];
pub const GREY: Rgb = [200, 200, 200];

/// Qualitative palette, cycled for series and labels.
pub const PALETTE: [Rgb; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
        '0' => [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
        '1' => [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        '2' => [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
        '3' => [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
        '4' => [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
        '5' => [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
        '6' => [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
        '7' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
        '8' => [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
        '9' => [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
        'A' => [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'B' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110],
        'C' => [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110],
        'D' => [0b11100, 0b10010, 0b10001, 0b10001, 0b10001, 0b10010, 0b11100],
        'E' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111],
        'F' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000],
        'G' => [0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111],
        'H' => [0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'I' => [0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        'J' => [0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100],
        'K' => [0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001],
        'L' => [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111],
        'M' => [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001],
        'N' => [0b10001, 0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001],
        'O' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'P' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000],
        'Q' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101],
        'R' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001],
        'S' => [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110],
        'T' => [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100],
        'U' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'V' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100],
        'W' => [0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010],
        'X' => [0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001],
        'Y' => [0b10001, 0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100],
        'Z' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111],
        ' ' => [0; 7],
        '-' => [0, 0, 0, 0b11111, 0, 0, 0],
        '_' => [0, 0, 0, 0, 0, 0, 0b11111],
        '.' => [0, 0, 0, 0, 0, 0b01100, 0b01100],
        ',' => [0, 0, 0, 0, 0b01100, 0b00100, 0b01000],
        ':' => [0, 0b01100, 0b01100, 0, 0b01100, 0b01100, 0],
        '+' => [0, 0b00100, 0b00100, 0b11111, 0b00100, 0b00100, 0],
        '=' => [0, 0, 0b11111, 0, 0b11111, 0, 0],
        '/' => [0b00001, 0b00010, 0b00010, 0b00100, 0b01000, 0b01000, 0b10000],
        '(' => [0b00010, 0b00100, 0b01000, 0b01000, 0b01000, 0b00100, 0b00010],
        ')' => [0b01000, 0b00100, 0b00010, 0b00010, 0b00010, 0b00100, 0b01000],
        '%' => [0b11000, 0b11001, 0b00010, 0b00100, 0b01000, 0b10011, 0b00011],
        '@' => [0b01110, 0b10001, 0b10111, 0b10101, 0b10111, 0b10000, 0b01110],
        '±' => [0b00100, 0b00100, 0b11111, 0b00100, 0b00100, 0, 0b11111],
        _ => [0b11111, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11111],
    }
}

/// RGB raster with simple drawing primitives.
#[derive(Debug, Clone, PartialEq)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Canvas {
    pub fn new(width: usize, height: usize, bg: Rgb) -> Self {
        Self {
            width,
            height,
            data: bg.repeat(width * height),
        }
    }

    pub fn set(&mut self, x: i64, y: i64, c: Rgb) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            let i = (y as usize * self.width + x as usize) * 3;
            self.data[i..i + 3].copy_from_slice(&c);
        }
    }

    pub fn fill_rect(&mut self, x: i64, y: i64, w: i64, h: i64, c: Rgb) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.set(xx, yy, c);
            }
        }
    }

    pub fn rect(&mut self, x: i64, y: i64, w: i64, h: i64, c: Rgb) {
        self.line(x, y, x + w, y, c);
        self.line(x, y + h, x + w, y + h, c);
        self.line(x, y, x, y + h, c);
        self.line(x + w, y, x + w, y + h, c);
    }

    pub fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.set(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    pub fn thick_line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb) {
        for (ox, oy) in [(0, 0), (1, 0), (0, 1)] {
            self.line(x0 + ox, y0 + oy, x1 + ox, y1 + oy, c);
        }
    }

    pub fn dot(&mut self, cx: i64, cy: i64, r: i64, c: Rgb) {
        for y in -r..=r {
            for x in -r..=r {
                if x * x + y * y <= r * r {
                    self.set(cx + x, cy + y, c);
                }
            }
        }
    }

    pub fn text(&mut self, x: i64, y: i64, s: &str, scale: i64, c: Rgb) {
        for (i, ch) in s.chars().enumerate() {
            let g = glyph(ch);
            let ox = x + i as i64 * 6 * scale;
            for (row, bits) in g.iter().enumerate() {
                for col in 0..5 {
                    if bits & (1 << (4 - col)) != 0 {
                        self.fill_rect(ox + col * scale, y + row as i64 * scale, scale, scale, c);
                    }
                }
            }
        }
    }

    pub fn text_width(s: &str, scale: i64) -> i64 {
        s.chars().count() as i64 * 6 * scale
    }

    pub fn into_image(self) -> ImageU8 {
        ImageU8::new(self.height, self.width, 3, self.data).expect("canvas dimensions are consistent")
    }
}

/// Blue → cyan → yellow → red ramp for values in [0, 1].
pub fn jet(v: f32) -> Rgb {
    let v = v.clamp(0.0, 1.0);
    let f = |x: f32| (255.0 * x.clamp(0.0, 1.0)).round() as u8;
    [f(1.5 - (4.0 * v - 3.0).abs()), f(1.5 - (4.0 * v - 2.0).abs()), f(1.5 - (4.0 * v - 1.0).abs())]
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= n as f64)
        .unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|k| k as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

struct Frame {
    left: i64,
    top: i64,
    w: i64,
    h: i64,
    x: (f64, f64),
    y: (f64, f64),
    log_x: bool,
}

impl Frame {
    fn tx(&self, v: f64) -> f64 {
        if self.log_x {
            v.ln()
        } else {
            v
        }
    }

    fn px(&self, x: f64, y: f64) -> (i64, i64) {
        let (x0, x1) = (self.tx(self.x.0), self.tx(self.x.1));
        let fx = (self.tx(x) - x0) / (x1 - x0).max(1e-12);
        let fy = (y - self.y.0) / (self.y.1 - self.y.0).max(1e-12);
        (
            self.left + (fx * self.w as f64).round() as i64,
            self.top + self.h - (fy * self.h as f64).round() as i64,
        )
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if (hi - lo).abs() < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let p = 0.05 * (hi - lo);
        (lo - p, hi + p)
    }
}

fn draw_axes(c: &mut Canvas, f: &Frame, title: &str, xl: &str, yl: &str, xticks: &[(f64, String)]) {
    c.rect(f.left, f.top, f.w, f.h, BLACK);
    c.text(f.left + (f.w - Canvas::text_width(title, 2)) / 2, 8, title, 2, BLACK);
    c.text(f.left + (f.w - Canvas::text_width(xl, 1)) / 2, f.top + f.h + 26, xl, 1, BLACK);
    c.text(4, f.top - 14, yl, 1, BLACK);
    for (v, label) in xticks {
        let (x, y) = f.px(*v, f.y.0);
        c.line(x, y, x, y - 4, BLACK);
        c.text(x - Canvas::text_width(label, 1) / 2, y + 6, label, 1, BLACK);
    }
    for v in nice_ticks(f.y.0, f.y.1, 5) {
        let (x, y) = f.px(f.x.0, v);
        c.line(x, y, x + 4, y, BLACK);
        let l = fmt_tick(v);
        c.text(x - Canvas::text_width(&l, 1) - 4, y - 3, &l, 1, BLACK);
    }
}

fn draw_legend(c: &mut Canvas, f: &Frame, names: &[String]) {
    let w = names.iter().map(|n| Canvas::text_width(n, 1)).max().unwrap_or(0) + 22;
    let h = names.len() as i64 * 12 + 6;
    let (x, y) = (f.left + f.w - w - 6, f.top + 6);
    c.fill_rect(x, y, w, h, WHITE);
    c.rect(x, y, w, h, GREY);
    for (i, n) in names.iter().enumerate() {
        let yy = y + 4 + i as i64 * 12;
        c.fill_rect(x + 4, yy, 8, 8, PALETTE[i % PALETTE.len()]);
        c.text(x + 16, yy + 1, n, 1, BLACK);
    }
}

/// Scatter plot with one colour per distinct label, in order of first
/// appearance of the label in `names`.
pub fn scatter(points: &[[f64; 2]], labels: &[usize], names: &[String], title: &str) -> ImageU8 {
    let (w, h) = (520, 440);
    let mut c = Canvas::new(w, h, WHITE);
    let (mut xr, mut yr) = ((f64::MAX, f64::MIN), (f64::MAX, f64::MIN));
    for p in points {
        xr = (xr.0.min(p[0]), xr.1.max(p[0]));
        yr = (yr.0.min(p[1]), yr.1.max(p[1]));
    }
    let f = Frame {
        left: 50,
        top: 40,
        w: w as i64 - 70,
        h: h as i64 - 90,
        x: padded(xr.0, xr.1),
        y: padded(yr.0, yr.1),
        log_x: false,
    };
    let xt: Vec<(f64, String)> = nice_ticks(f.x.0, f.x.1, 5).into_iter().map(|v| (v, fmt_tick(v))).collect();
    draw_axes(&mut c, &f, title, "DIM 1", "DIM 2", &xt);
    for (p, &l) in points.iter().zip(labels) {
        let (x, y) = f.px(p[0], p[1]);
        c.dot(x, y, 2, PALETTE[l % PALETTE.len()]);
    }
    draw_legend(&mut c, &f, names);
    c.into_image()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Line chart; x ticks are placed at the union of series x values.
pub fn line_chart(series: &[Series], title: &str, x_label: &str, y_label: &str, log_x: bool) -> ImageU8 {
    let (w, h) = (560, 420);
    let mut c = Canvas::new(w, h, WHITE);
    let mut xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let ys: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).collect();
    let (y0, y1) = ys.iter().fold((f64::MAX, f64::MIN), |a, &v| (a.0.min(v), a.1.max(v)));
    let (x0, x1) = (xs.first().copied().unwrap_or(0.0), xs.last().copied().unwrap_or(1.0));
    let xr = if log_x {
        let (a, b) = (x0.ln(), x1.ln());
        let (a, b) = padded(a, b);
        (a.exp(), b.exp())
    } else {
        padded(x0, x1)
    };
    let f = Frame {
        left: 56,
        top: 40,
        w: w as i64 - 76,
        h: h as i64 - 90,
        x: xr,
        y: padded(y0, y1),
        log_x,
    };
    let xt: Vec<(f64, String)> = xs.iter().map(|&v| (v, fmt_tick(v))).collect();
    draw_axes(&mut c, &f, title, x_label, y_label, &xt);
    for (i, s) in series.iter().enumerate() {
        let col = PALETTE[i % PALETTE.len()];
        let mut pts = s.points.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        for wnd in pts.windows(2) {
            let (a, b) = (f.px(wnd[0].0, wnd[0].1), f.px(wnd[1].0, wnd[1].1));
            c.thick_line(a.0, a.1, b.0, b.1, col);
        }
        for p in &pts {
            let (x, y) = f.px(p.0, p.1);
            c.dot(x, y, 3, col);
        }
    }
    let names: Vec<String> = series.iter().map(|s| s.name.clone()).collect();
    draw_legend(&mut c, &f, &names);
    c.into_image()
}

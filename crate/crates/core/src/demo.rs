//! One-dimensional walk-through of why adaptive downsampling alone loses the
//! shift, and how upsampling onto the selected grid restores it.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::sampling::{aps_downsample, aps_upsample, upsample_u2, NormOrder, PolyphaseIndex};
use crate::tensor::{Shift, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Demo1d {
    pub shift: i64,
    pub x: Vec<f64>,
    pub x_shifted: Vec<f64>,
    pub down: Vec<f64>,
    pub down_shifted: Vec<f64>,
    pub index: usize,
    pub index_shifted: usize,
    /// Adaptive downsampling followed by plain `U_2`.
    pub plain_up: Vec<f64>,
    pub plain_up_shifted: Vec<f64>,
    /// Adaptive downsampling followed by adaptive upsampling.
    pub aps_up: Vec<f64>,
    pub aps_up_shifted: Vec<f64>,
    pub plain_related: bool,
    pub aps_related: bool,
}

/// Default signal: zeros on the even grid, `5, 7, 9, ...` on the odd grid.
pub fn default_signal(length: usize) -> Vec<f64> {
    (0..length)
        .map(|n| {
            if n % 2 == 1 {
                5.0 + (n - 1) as f64
            } else {
                0.0
            }
        })
        .collect()
}

pub fn demo1d(length: usize, shift: i64) -> Result<Demo1d> {
    if length == 0 || !length.is_multiple_of(2) {
        return Err(Error::NotDivisible {
            extent: length,
            divisor: 2,
        });
    }
    demo1d_with_signal(default_signal(length), shift, NormOrder::default())
}

pub fn demo1d_with_signal(signal: Vec<f64>, shift: i64, p: NormOrder) -> Result<Demo1d> {
    if signal.is_empty() {
        return Err(Error::NotDivisible {
            extent: 0,
            divisor: 2,
        });
    }
    let k = Shift::d1(shift);
    let x = Tensor::signal(signal);
    let xs = x.circular_shift(&k)?;
    let (y, i) = aps_downsample(&x, p)?;
    let (ys, is) = aps_downsample(&xs, p)?;
    let z = upsample_u2(&y);
    let zs = upsample_u2(&ys);
    let za = aps_upsample(&y, &i)?;
    let zas = aps_upsample(&ys, &is)?;
    let plain_related = z.circular_shift(&k)? == zs;
    let aps_related = za.circular_shift(&k)? == zas;
    let phase = |i: &PolyphaseIndex| i.phase()[0];
    Ok(Demo1d {
        shift,
        x: x.data().to_vec(),
        x_shifted: xs.data().to_vec(),
        down: y.data().to_vec(),
        down_shifted: ys.data().to_vec(),
        index: phase(&i),
        index_shifted: phase(&is),
        plain_up: z.into_data(),
        plain_up_shifted: zs.into_data(),
        aps_up: za.into_data(),
        aps_up_shifted: zas.into_data(),
        plain_related,
        aps_related,
    })
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

impl Demo1d {
    pub fn render_text(&self) -> String {
        let k = self.shift;
        let rows = [
            ("x".to_string(), fmt_vec(&self.x)),
            (format!("T_{k}(x)"), fmt_vec(&self.x_shifted)),
            (
                "APS-D(x)".to_string(),
                format!("{}  index {}", fmt_vec(&self.down), self.index),
            ),
            (
                format!("APS-D(T_{k}x)"),
                format!(
                    "{}  index {}",
                    fmt_vec(&self.down_shifted),
                    self.index_shifted
                ),
            ),
            ("U2 APS-D(x)".to_string(), fmt_vec(&self.plain_up)),
            (format!("U2 APS-D(T_{k}x)"), fmt_vec(&self.plain_up_shifted)),
            ("APS-U APS-D(x)".to_string(), fmt_vec(&self.aps_up)),
            (
                format!("APS-U APS-D(T_{k}x)"),
                fmt_vec(&self.aps_up_shifted),
            ),
        ];
        let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
        let mut s = String::new();
        for (label, value) in &rows {
            let _ = writeln!(s, "{label:<width$}  {value}");
        }
        let verdict = |ok: bool| {
            if ok {
                "shift-related"
            } else {
                "NOT shift-related"
            }
        };
        let _ = writeln!(
            s,
            "plain U2 outputs: {} by {k}",
            verdict(self.plain_related)
        );
        let _ = writeln!(s, "APS-U outputs:    {} by {k}", verdict(self.aps_related));
        s
    }

    /// One row per sample position, with the downsampled columns padded.
    pub fn render_csv(&self) -> String {
        let mut s = String::from(
            "n,x,x_shifted,down,down_shifted,plain_up,plain_up_shifted,aps_up,aps_up_shifted\n",
        );
        let at = |v: &[f64], n: usize| v.get(n).map(|x| x.to_string()).unwrap_or_default();
        for n in 0..self.x.len() {
            let _ = writeln!(
                s,
                "{n},{},{},{},{},{},{},{},{}",
                at(&self.x, n),
                at(&self.x_shifted, n),
                at(&self.down, n),
                at(&self.down_shifted, n),
                at(&self.plain_up, n),
                at(&self.plain_up_shifted, n),
                at(&self.aps_up, n),
                at(&self.aps_up_shifted, n),
            );
        }
        let _ = writeln!(
            s,
            "# index={},index_shifted={},plain_related={},aps_related={}",
            self.index, self.index_shifted, self.plain_related, self.aps_related
        );
        s
    }
}

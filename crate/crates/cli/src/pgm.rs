//! Grayscale heatmaps as binary PGM (P5).

use std::path::Path;

use terminator_core::{Scalar, Tensor};

/// A row-major `height × width` grid of 8-bit levels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Heatmap {
    /// Min-max scales `values` to 0..=255; a constant map becomes all zeros.
    pub fn from_values(values: &[Scalar], height: usize, width: usize) -> Self {
        assert_eq!(values.len(), height * width);
        let lo = values.iter().copied().fold(Scalar::INFINITY, Scalar::min);
        let hi = values.iter().copied().fold(Scalar::NEG_INFINITY, Scalar::max);
        let span = hi - lo;
        let pixels = values
            .iter()
            .map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 })
            .collect();
        Heatmap { width, height, pixels }
    }

    /// Sums sample `index` of `t: [B, C, ...]` over channels. 1D maps of
    /// square length are folded row-major into a square.
    pub fn channel_sum(t: &Tensor, index: usize) -> Self {
        let s = t.shape();
        let inner: usize = s[2..].iter().product();
        let c = s[1];
        let base = index * c * inner;
        let mut acc = vec![0.0 as Scalar; inner];
        for ch in 0..c {
            for (a, &v) in acc.iter_mut().zip(&t.data()[base + ch * inner..base + (ch + 1) * inner]) {
                *a += v;
            }
        }
        let (h, w) = match s.len() {
            4 => (s[2], s[3]),
            _ => {
                let side = (inner as f64).sqrt().round() as usize;
                if side * side == inner { (side, side) } else { (1, inner) }
            }
        };
        Heatmap::from_values(&acc, h, w)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }
}

//! Forward-difference gradient, its negative adjoint (divergence), and the
//! pointwise projections onto the dual constraint sets.

use crate::raster::Raster;

/// A 2-vector per texel, stored as two planes.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    width: usize,
    height: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl VectorField {
    pub fn zeros(width: usize, height: usize) -> Self {
        VectorField {
            width,
            height,
            x: vec![0.0; width * height],
            y: vec![0.0; width * height],
        }
    }

    pub fn from_planes(width: usize, height: usize, x: Vec<f64>, y: Vec<f64>) -> Self {
        assert_eq!(x.len(), width * height);
        assert_eq!(y.len(), width * height);
        VectorField {
            width,
            height,
            x,
            y,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn xs(&self) -> &[f64] {
        &self.x
    }

    pub fn ys(&self) -> &[f64] {
        &self.y
    }

    pub fn xs_mut(&mut self) -> &mut [f64] {
        &mut self.x
    }

    pub fn ys_mut(&mut self) -> &mut [f64] {
        &mut self.y
    }

    pub fn dot(&self, other: &VectorField) -> f64 {
        crate::raster::dot(&self.x, &other.x) + crate::raster::dot(&self.y, &other.y)
    }

    /// Largest per-texel Euclidean norm.
    pub fn max_norm(&self) -> f64 {
        self.x
            .iter()
            .zip(&self.y)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    /// Multiplies both components at each texel by `weights`.
    pub fn scaled(&self, weights: &[f64]) -> VectorField {
        VectorField {
            width: self.width,
            height: self.height,
            x: self.x.iter().zip(weights).map(|(a, w)| a * w).collect(),
            y: self.y.iter().zip(weights).map(|(a, w)| a * w).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.y).all(|v| v.is_finite())
    }
}

/// Forward differences with a zero difference on the last column / row.
pub fn grad_op(t: &Raster) -> VectorField {
    let (w, h) = t.dims();
    let s = t.as_slice();
    let mut g = VectorField::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                g.x[i] = s[i + 1] - s[i];
            }
            if y + 1 < h {
                g.y[i] = s[i + w] - s[i];
            }
        }
    }
    g
}

/// Divergence, defined as the exact negative adjoint of [`grad_op`]:
/// `⟨grad t, p⟩ = −⟨t, div p⟩`.
pub fn div_op(p: &VectorField) -> Raster {
    let (w, h) = p.dims();
    let mut d = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut v = 0.0;
            if x + 1 < w {
                v += p.x[i];
            }
            if x > 0 {
                v -= p.x[i - 1];
            }
            if y + 1 < h {
                v += p.y[i];
            }
            if y > 0 {
                v -= p.y[i - w];
            }
            d[i] = v;
        }
    }
    Raster::from_vec(w, h, d).expect("same dims")
}

/// `v / max(1, ‖v‖₂)`.
#[inline]
pub fn project_l2_ball(v: (f64, f64)) -> (f64, f64) {
    let n = v.0.hypot(v.1);
    if n > 1.0 {
        (v.0 / n, v.1 / n)
    } else {
        v
    }
}

#[inline]
pub fn clamp_interval(s: f64) -> f64 {
    s.clamp(-1.0, 1.0)
}

//! Per-pixel value, gradient and Hessian of a filtered field.
//!
//! Derivatives are the node values of the cubic-spline-consistent
//! interpolant, realized as fixed finite-difference stencils: fourth-order
//! centered first and second differences, the mixed derivative as the
//! tensor product of the two first-derivative operators, and third-order
//! one-sided stencils on the two outermost pixels of clamped axes. Axes
//! shorter than 5 pixels fall back to second-order stencils.

use crate::grid_field::{Boundary, GridSpec, ScalarField2D};

/// Sparse 1D linear operator acting along one axis.
#[derive(Debug, Clone)]
pub struct AxisOperator {
    rows: Vec<Vec<(usize, f64)>>,
}

const D1_CENTER: [(isize, f64); 4] = [(-2, 1.0 / 12.0), (-1, -8.0 / 12.0), (1, 8.0 / 12.0), (2, -1.0 / 12.0)];
const D2_CENTER: [(isize, f64); 5] = [
    (-2, -1.0 / 12.0),
    (-1, 16.0 / 12.0),
    (0, -30.0 / 12.0),
    (1, 16.0 / 12.0),
    (2, -1.0 / 12.0),
];
// one-sided, third order, offsets relative to the evaluation pixel
const D1_EDGE0: [(isize, f64); 4] = [(0, -11.0 / 6.0), (1, 18.0 / 6.0), (2, -9.0 / 6.0), (3, 2.0 / 6.0)];
const D1_EDGE1: [(isize, f64); 4] = [(-1, -2.0 / 6.0), (0, -3.0 / 6.0), (1, 1.0), (2, -1.0 / 6.0)];
const D2_EDGE0: [(isize, f64); 5] = [
    (0, 35.0 / 12.0),
    (1, -104.0 / 12.0),
    (2, 114.0 / 12.0),
    (3, -56.0 / 12.0),
    (4, 11.0 / 12.0),
];
const D2_EDGE1: [(isize, f64); 5] = [
    (-1, 11.0 / 12.0),
    (0, -20.0 / 12.0),
    (1, 6.0 / 12.0),
    (2, 4.0 / 12.0),
    (3, -1.0 / 12.0),
];
// short-axis fallbacks, second order
const D1_SHORT: [(isize, f64); 2] = [(-1, -0.5), (1, 0.5)];
const D1_SHORT_EDGE0: [(isize, f64); 3] = [(0, -1.5), (1, 2.0), (2, -0.5)];
const D2_SHORT: [(isize, f64); 3] = [(-1, 1.0), (0, -2.0), (1, 1.0)];
const D2_SHORT_EDGE0: [(isize, f64); 3] = [(0, 1.0), (1, -2.0), (2, 1.0)];

impl AxisOperator {
    fn build(n: usize, boundary: Boundary, order: u8, h: f64) -> Self {
        let scale = if order == 1 { 1.0 / h } else { 1.0 / (h * h) };
        let short = n < 5;
        let mut rows = Vec::with_capacity(n);
        for i in 0..n as isize {
            let mut row: Vec<(usize, f64)> = Vec::new();
            let mut push = |off: isize, c: f64, mirror: bool| {
                let (o, c) = if mirror {
                    (-off, if order == 1 { -c } else { c })
                } else {
                    (off, c)
                };
                let k = (i + o).rem_euclid(n as isize) as usize;
                match row.iter_mut().find(|e| e.0 == k) {
                    Some(e) => e.1 += c * scale,
                    None => row.push((k, c * scale)),
                }
            };
            let from_end = n as isize - 1 - i;
            match (boundary, short, order) {
                (Boundary::Periodic, false, 1) => D1_CENTER.iter().for_each(|&(o, c)| push(o, c, false)),
                (Boundary::Periodic, false, _) => D2_CENTER.iter().for_each(|&(o, c)| push(o, c, false)),
                (Boundary::Periodic, true, 1) => D1_SHORT.iter().for_each(|&(o, c)| push(o, c, false)),
                (Boundary::Periodic, true, _) => D2_SHORT.iter().for_each(|&(o, c)| push(o, c, false)),
                (Boundary::Clamped, false, ord) => {
                    let (edge0, edge1, center): (&[(isize, f64)], &[(isize, f64)], &[(isize, f64)]) = if ord == 1 {
                        (&D1_EDGE0, &D1_EDGE1, &D1_CENTER)
                    } else {
                        (&D2_EDGE0, &D2_EDGE1, &D2_CENTER)
                    };
                    let (st, mirror) = match (i, from_end) {
                        (0, _) => (edge0, false),
                        (1, _) => (edge1, false),
                        (_, 0) => (edge0, true),
                        (_, 1) => (edge1, true),
                        _ => (center, false),
                    };
                    st.iter().for_each(|&(o, c)| push(o, c, mirror));
                }
                (Boundary::Clamped, true, ord) => {
                    let (edge, center): (&[(isize, f64)], &[(isize, f64)]) = if ord == 1 {
                        (&D1_SHORT_EDGE0, &D1_SHORT)
                    } else {
                        (&D2_SHORT_EDGE0, &D2_SHORT)
                    };
                    let (st, mirror) = match (i, from_end) {
                        (0, _) => (edge, false),
                        (_, 0) => (edge, true),
                        _ => (center, false),
                    };
                    st.iter().for_each(|&(o, c)| push(o, c, mirror));
                }
            }
            rows.push(row);
        }
        AxisOperator { rows }
    }

    pub fn first(n: usize, boundary: Boundary, h: f64) -> Self {
        Self::build(n, boundary, 1, h)
    }

    pub fn second(n: usize, boundary: Boundary, h: f64) -> Self {
        Self::build(n, boundary, 2, h)
    }

    /// Row `i` as `(column, coefficient)` pairs.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    fn apply_x(&self, data: &[f64], nx: usize, ny: usize, out: &mut [f64]) {
        for iy in 0..ny {
            let line = &data[iy * nx..(iy + 1) * nx];
            for (ix, row) in self.rows.iter().enumerate() {
                out[iy * nx + ix] = row.iter().map(|&(k, c)| c * line[k]).sum();
            }
        }
    }

    fn apply_y(&self, data: &[f64], nx: usize, _ny: usize, out: &mut [f64]) {
        for (iy, row) in self.rows.iter().enumerate() {
            for ix in 0..nx {
                out[iy * nx + ix] = row.iter().map(|&(k, c)| c * data[k * nx + ix]).sum();
            }
        }
    }

    fn accumulate_transpose_x(&self, data: &[f64], nx: usize, ny: usize, out: &mut [f64]) {
        for iy in 0..ny {
            for (ix, row) in self.rows.iter().enumerate() {
                let g = data[iy * nx + ix];
                for &(k, c) in row {
                    out[iy * nx + k] += c * g;
                }
            }
        }
    }

    fn accumulate_transpose_y(&self, data: &[f64], nx: usize, _ny: usize, out: &mut [f64]) {
        for (iy, row) in self.rows.iter().enumerate() {
            for ix in 0..nx {
                let g = data[iy * nx + ix];
                for &(k, c) in row {
                    out[k * nx + ix] += c * g;
                }
            }
        }
    }
}

/// Derivative operators of a grid, in physical units.
#[derive(Debug, Clone)]
pub struct GridDerivatives {
    spec: GridSpec,
    dx: AxisOperator,
    dxx: AxisOperator,
    dy: AxisOperator,
    dyy: AxisOperator,
}

impl GridDerivatives {
    pub fn new(spec: GridSpec) -> Self {
        GridDerivatives {
            spec,
            dx: AxisOperator::first(spec.nx, spec.boundary, spec.dx),
            dxx: AxisOperator::second(spec.nx, spec.boundary, spec.dx),
            dy: AxisOperator::first(spec.ny, spec.boundary, spec.dx),
            dyy: AxisOperator::second(spec.ny, spec.boundary, spec.dx),
        }
    }

    pub fn x_first(&self) -> &AxisOperator {
        &self.dx
    }

    pub fn y_first(&self) -> &AxisOperator {
        &self.dy
    }

    pub fn jet(&self, f: &ScalarField2D) -> JetField {
        let s = self.spec;
        let (nx, ny) = (s.nx, s.ny);
        let n = s.len();
        let mut j = JetField::zeros(s);
        j.value.copy_from_slice(&f.values);
        self.dx.apply_x(&f.values, nx, ny, &mut j.gx);
        self.dy.apply_y(&f.values, nx, ny, &mut j.gy);
        self.dxx.apply_x(&f.values, nx, ny, &mut j.hxx);
        self.dyy.apply_y(&f.values, nx, ny, &mut j.hyy);
        let mut tmp = vec![0.0; n];
        self.dy.apply_y(&f.values, nx, ny, &mut tmp);
        self.dx.apply_x(&tmp, nx, ny, &mut j.hxy);
        j
    }

    /// Mixed derivative taken in the other stencil order (x first, then y).
    pub fn mixed_yx(&self, f: &ScalarField2D) -> Vec<f64> {
        let s = self.spec;
        let mut tmp = vec![0.0; s.len()];
        let mut out = vec![0.0; s.len()];
        self.dx.apply_x(&f.values, s.nx, s.ny, &mut tmp);
        self.dy.apply_y(&tmp, s.nx, s.ny, &mut out);
        out
    }

    pub fn jet_transpose(&self, ct: &JetField) -> ScalarField2D {
        let s = self.spec;
        let (nx, ny) = (s.nx, s.ny);
        let mut out = ct.value.clone();
        self.dx.accumulate_transpose_x(&ct.gx, nx, ny, &mut out);
        self.dy.accumulate_transpose_y(&ct.gy, nx, ny, &mut out);
        self.dxx.accumulate_transpose_x(&ct.hxx, nx, ny, &mut out);
        self.dyy.accumulate_transpose_y(&ct.hyy, nx, ny, &mut out);
        let mut tmp = vec![0.0; s.len()];
        self.dx.accumulate_transpose_x(&ct.hxy, nx, ny, &mut tmp);
        self.dy.accumulate_transpose_y(&tmp, nx, ny, &mut out);
        ScalarField2D { spec: s, values: out }
    }
}

/// Value, gradient and symmetric Hessian per pixel. Also used for
/// cotangents flowing back through [`jet_transpose`].
#[derive(Debug, Clone, PartialEq)]
pub struct JetField {
    pub spec: GridSpec,
    pub value: Vec<f64>,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub hxx: Vec<f64>,
    pub hxy: Vec<f64>,
    pub hyy: Vec<f64>,
}

/// Per-pixel view of a [`JetField`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet {
    pub value: f64,
    pub gx: f64,
    pub gy: f64,
    pub hxx: f64,
    pub hxy: f64,
    pub hyy: f64,
}

impl Jet {
    pub fn grad_norm_sq(&self) -> f64 {
        self.gx * self.gx + self.gy * self.gy
    }

    /// Squared Frobenius norm of the full symmetric Hessian.
    pub fn hess_frobenius_sq(&self) -> f64 {
        self.hxx * self.hxx + 2.0 * self.hxy * self.hxy + self.hyy * self.hyy
    }
}

impl JetField {
    pub fn zeros(spec: GridSpec) -> Self {
        let n = spec.len();
        JetField {
            spec,
            value: vec![0.0; n],
            gx: vec![0.0; n],
            gy: vec![0.0; n],
            hxx: vec![0.0; n],
            hxy: vec![0.0; n],
            hyy: vec![0.0; n],
        }
    }

    #[inline]
    pub fn at(&self, i: usize) -> Jet {
        Jet {
            value: self.value[i],
            gx: self.gx[i],
            gy: self.gy[i],
            hxx: self.hxx[i],
            hxy: self.hxy[i],
            hyy: self.hyy[i],
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: Jet) {
        self.value[i] = j.value;
        self.gx[i] = j.gx;
        self.gy[i] = j.gy;
        self.hxx[i] = j.hxx;
        self.hxy[i] = j.hxy;
        self.hyy[i] = j.hyy;
    }

    pub fn channels(&self) -> [(&'static str, &Vec<f64>); 6] {
        [
            ("val", &self.value),
            ("dx", &self.gx),
            ("dy", &self.gy),
            ("dxx", &self.hxx),
            ("dxy", &self.hxy),
            ("dyy", &self.hyy),
        ]
    }

    pub fn dot(&self, other: &JetField) -> f64 {
        self.channels()
            .iter()
            .zip(other.channels().iter())
            .map(|((_, a), (_, b))| a.iter().zip(b.iter()).map(|(p, q)| p * q).sum::<f64>())
            .sum()
    }

    /// Writes each channel as a field file with the `.val`, `.dx`, ...
    /// suffix appended to `base`.
    pub fn dump(&self, base: &std::path::Path) -> crate::Result<()> {
        for (name, ch) in self.channels() {
            let mut p = base.as_os_str().to_owned();
            p.push(format!(".{name}"));
            let f = ScalarField2D::new(self.spec, ch.clone())?;
            crate::fieldio::write_field(std::path::Path::new(&p), &f)?;
        }
        Ok(())
    }
}

pub fn jet(rho_tilde: &ScalarField2D) -> JetField {
    GridDerivatives::new(rho_tilde.spec).jet(rho_tilde)
}

pub fn jet_transpose(cotangents: &JetField) -> ScalarField2D {
    GridDerivatives::new(cotangents.spec).jet_transpose(cotangents)
}

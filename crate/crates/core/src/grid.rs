//! Tensor state grids and grid-backed functions.

use std::io::Write;
use std::sync::Arc;

use crate::error::{PdmpError, Result};
use crate::model::ModelSpec;
use crate::point::Point;

/// Grid nodes closer than this to a query coordinate are treated as exact hits.
const SNAP: f64 = 1e-12;

/// Interior tensor grid plus the deduplicated boundary images `φ(x,t*(x))`.
#[derive(Clone, Debug)]
pub struct StateGrid {
    axes: Vec<Vec<f64>>,
    interior: Vec<Point>,
    boundary: Vec<Point>,
    hit_times: Vec<f64>,
    exits: Vec<Option<usize>>,
}

impl StateGrid {
    /// Builds the tensor product of `axes` (each strictly increasing).
    pub fn tensor(model: &ModelSpec, axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.len() != model.state_dim {
            return Err(PdmpError::Config(format!(
                "grid has {} axes but the model is {}-dimensional",
                axes.len(),
                model.state_dim
            )));
        }
        for ax in &axes {
            if ax.is_empty() || ax.windows(2).any(|w| w[1] <= w[0]) {
                return Err(PdmpError::Config("grid axes must be non-empty and increasing".into()));
            }
        }
        let mut interior = Vec::new();
        let mut idx = vec![0usize; axes.len()];
        'outer: loop {
            let coords: Vec<f64> = idx.iter().zip(&axes).map(|(&i, ax)| ax[i]).collect();
            let p = Point::new(&coords);
            if !model.is_interior(&p) {
                return Err(PdmpError::Config(format!("grid point {p:?} is not in E")));
            }
            interior.push(p);
            // Row-major: last axis varies fastest.
            for d in (0..axes.len()).rev() {
                idx[d] += 1;
                if idx[d] < axes[d].len() {
                    continue 'outer;
                }
                idx[d] = 0;
            }
            break;
        }

        let mut boundary: Vec<Point> = Vec::new();
        let mut hit_times = Vec::with_capacity(interior.len());
        let mut exits = Vec::with_capacity(interior.len());
        for x in &interior {
            let ts = model.hit_time(x)?;
            hit_times.push(ts);
            if ts.is_finite() {
                let z = model.flow_at(x, ts)?;
                let slot = match boundary.iter().position(|b| b.dist(&z) <= 1e-9) {
                    Some(i) => i,
                    None => {
                        boundary.push(z);
                        boundary.len() - 1
                    }
                };
                exits.push(Some(slot));
            } else {
                exits.push(None);
            }
        }
        Ok(Self {
            axes,
            interior,
            boundary,
            hit_times,
            exits,
        })
    }

    /// Uniform axis `lo, lo+step, …` up to `hi` inclusive.
    pub fn uniform_axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        (0..=n).map(|k| lo + k as f64 * step).collect()
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn interior(&self) -> &[Point] {
        &self.interior
    }

    pub fn boundary(&self) -> &[Point] {
        &self.boundary
    }

    pub fn len(&self) -> usize {
        self.interior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interior.is_empty()
    }

    /// `t*(x_i)` for interior point `i`.
    pub fn hit_time(&self, i: usize) -> f64 {
        self.hit_times[i]
    }

    /// Boundary index reached by the flow from interior point `i`.
    pub fn exit(&self, i: usize) -> Option<usize> {
        self.exits[i]
    }

    /// Interior point nearest to the centroid of the grid's bounding box.
    pub fn centroid_index(&self) -> usize {
        let mid: Vec<f64> = self
            .axes
            .iter()
            .map(|ax| 0.5 * (ax[0] + ax[ax.len() - 1]))
            .collect();
        self.nearest_interior(&Point::new(&mid))
    }

    pub fn nearest_interior(&self, p: &Point) -> usize {
        let mut flat = 0;
        for (d, ax) in self.axes.iter().enumerate() {
            let v = p[d];
            let j = match ax.binary_search_by(|n| n.total_cmp(&v)) {
                Ok(j) => j,
                Err(0) => 0,
                Err(j) if j >= ax.len() => ax.len() - 1,
                Err(j) => {
                    if v - ax[j - 1] <= ax[j] - v {
                        j - 1
                    } else {
                        j
                    }
                }
            };
            flat = flat * ax.len() + j;
        }
        flat
    }

    pub fn nearest_boundary(&self, z: &Point) -> Option<usize> {
        self.boundary
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.dist(z).total_cmp(&b.1.dist(z)))
            .map(|(i, _)| i)
    }

    /// Multilinear weights for `p`, clamped to the grid box.
    pub fn stencil(&self, p: &Point) -> Stencil {
        let mut st = Stencil {
            idx: [0; CORNERS],
            w: [0.0; CORNERS],
            len: 1,
        };
        st.w[0] = 1.0;
        for (d, ax) in self.axes.iter().enumerate() {
            let v = p[d];
            let n = ax.len();
            let (j, w_hi) = if n == 1 || v <= ax[0] + SNAP {
                (0, 0.0)
            } else if v >= ax[n - 1] - SNAP {
                (n - 1, 0.0)
            } else {
                let j = ax.partition_point(|&node| node <= v) - 1;
                if (v - ax[j]).abs() <= SNAP {
                    (j, 0.0)
                } else if (ax[j + 1] - v).abs() <= SNAP {
                    (j + 1, 0.0)
                } else {
                    (j, (v - ax[j]) / (ax[j + 1] - ax[j]))
                }
            };
            let len = st.len;
            for k in 0..len {
                let (flat, w) = (st.idx[k], st.w[k]);
                st.idx[k] = flat * n + j;
                st.w[k] = w * (1.0 - w_hi);
                if w_hi > 0.0 {
                    st.idx[st.len] = flat * n + j + 1;
                    st.w[st.len] = w * w_hi;
                    st.len += 1;
                }
            }
        }
        st
    }
}

const CORNERS: usize = 1 << crate::point::MAX_DIM;

/// Interpolation weights over at most `2^MAX_DIM` grid nodes.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    idx: [usize; CORNERS],
    w: [f64; CORNERS],
    len: usize,
}

impl Stencil {
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.idx[..self.len].iter().copied().zip(self.w[..self.len].iter().copied())
    }

    pub fn apply(&self, values: &[f64]) -> f64 {
        self.iter().map(|(i, w)| w * values[i]).sum()
    }
}

/// Values on the interior grid and on the boundary set.
#[derive(Clone, Debug)]
pub struct GridFunction {
    grid: Arc<StateGrid>,
    pub values: Vec<f64>,
    pub boundary_values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Arc<StateGrid>, values: Vec<f64>, boundary_values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() || boundary_values.len() != grid.boundary().len() {
            return Err(PdmpError::Contract(format!(
                "grid function sized {}+{} on a grid of {}+{}",
                values.len(),
                boundary_values.len(),
                grid.len(),
                grid.boundary().len()
            )));
        }
        Ok(Self {
            grid,
            values,
            boundary_values,
        })
    }

    pub fn constant(grid: Arc<StateGrid>, c: f64) -> Self {
        let (n, m) = (grid.len(), grid.boundary().len());
        Self {
            grid,
            values: vec![c; n],
            boundary_values: vec![c; m],
        }
    }

    pub fn zeros(grid: Arc<StateGrid>) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f` at every interior and boundary point.
    pub fn sample(grid: Arc<StateGrid>, f: impl Fn(&Point) -> f64) -> Self {
        let values = grid.interior().iter().map(&f).collect();
        let boundary_values = grid.boundary().iter().map(&f).collect();
        Self {
            grid,
            values,
            boundary_values,
        }
    }

    pub fn grid(&self) -> &Arc<StateGrid> {
        &self.grid
    }

    /// Multilinear interpolation over the interior grid.
    pub fn eval(&self, p: &Point) -> f64 {
        self.grid.stencil(p).apply(&self.values)
    }

    /// Value at the boundary point nearest to `z`.
    pub fn eval_boundary(&self, z: &Point) -> f64 {
        match self.grid.nearest_boundary(z) {
            Some(i) => self.boundary_values[i],
            None => self.eval(z),
        }
    }

    /// `‖v‖_g = max_i |v(x_i)| / g(x_i)` over the interior grid.
    pub fn g_norm(&self, g: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&g.values)
            .map(|(v, gv)| v.abs() / gv)
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `‖self − other‖_g`.
    pub fn g_dist(&self, other: &GridFunction, g: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .zip(&g.values)
            .map(|((a, b), gv)| (a - b).abs() / gv)
            .fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            boundary_values: self.boundary_values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            boundary_values: self
                .boundary_values
                .iter()
                .zip(&other.boundary_values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().chain(&self.boundary_values).all(|v| v.is_finite())
    }

    /// CSV with columns `x0, …, value, boundary`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.grid.dim()).map(|d| format!("x{d}")).collect();
        header.push("value".into());
        header.push("boundary".into());
        w.write_record(&header).map_err(csv_err)?;
        let rows = self
            .grid
            .interior()
            .iter()
            .zip(&self.values)
            .map(|(p, v)| (p, v, 0))
            .chain(self.grid.boundary().iter().zip(&self.boundary_values).map(|(p, v)| (p, v, 1)));
        for (p, v, flag) in rows {
            let mut rec: Vec<String> = p.coords().iter().map(|c| format!("{c}")).collect();
            rec.push(format!("{v}"));
            rec.push(flag.to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> PdmpError {
    PdmpError::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ActionSets, DiscreteDist, Kernel};
    use proptest::prelude::*;

    fn model(dim: usize) -> ModelSpec {
        ModelSpec::builder("box", dim)
            .interior(|x| x.coords().iter().all(|c| *c > 0.0 && *c < 1.0))
            .closed_form_flow(
                |x, t| {
                    let mut y = *x;
                    y[0] -= t;
                    y
                },
                |x| x[0],
            )
            .intensity(|_, _| 1.0)
            .kernel(Kernel::Fixed(Arc::new(
                DiscreteDist::uniform(vec![Point::new(&vec![0.5; dim])]).unwrap(),
            )))
            .running_cost(|_, _| 0.0)
            .actions(ActionSets::uniform(vec![1.0]))
            .build()
            .unwrap()
    }

    fn grid1() -> Arc<StateGrid> {
        Arc::new(StateGrid::tensor(&model(1), vec![StateGrid::uniform_axis(0.1, 0.9, 0.1)]).unwrap())
    }

    #[test]
    fn uniform_axis_endpoints() {
        let ax = StateGrid::uniform_axis(0.01, 0.99, 0.01);
        assert_eq!(ax.len(), 99);
        assert!((ax[98] - 0.99).abs() < 1e-12);
    }

    #[test]
    fn boundary_images_are_deduplicated() {
        let g = grid1();
        assert_eq!(g.len(), 9);
        assert_eq!(g.boundary().len(), 1);
        assert_eq!(g.boundary()[0].x(), 0.0);
        assert_eq!(g.exit(3), Some(0));
        let g2 = StateGrid::tensor(
            &model(2),
            vec![vec![0.25, 0.75], vec![0.2, 0.4, 0.6]],
        )
        .unwrap();
        assert_eq!(g2.len(), 6);
        assert_eq!(g2.boundary().len(), 3);
        assert_eq!(g2.interior()[1].coords(), &[0.25, 0.4]);
    }

    #[test]
    fn rejects_exterior_points() {
        assert!(StateGrid::tensor(&model(1), vec![vec![0.5, 1.5]]).is_err());
    }

    #[test]
    fn interpolation_is_exact_on_nodes_and_clamped() {
        let g = grid1();
        let f = GridFunction::sample(g.clone(), |p| p.x() * p.x());
        for p in g.interior() {
            assert_eq!(f.eval(p), p.x() * p.x());
        }
        assert!((f.eval(&0.15.into()) - 0.5 * (0.01 + 0.04)).abs() < 1e-15);
        assert!((f.eval(&0.05.into()) - 0.01).abs() < 1e-15);
        assert!((f.eval(&0.95.into()) - 0.81).abs() < 1e-15);
    }

    #[test]
    fn nearest_lookup() {
        let g = grid1();
        assert_eq!(g.nearest_interior(&0.34.into()), 2);
        assert_eq!(g.nearest_interior(&0.36.into()), 3);
        assert_eq!(g.nearest_interior(&2.0.into()), 8);
        assert_eq!(g.centroid_index(), 4);
    }

    #[test]
    fn g_norm_weights_by_g() {
        let g = grid1();
        let w = GridFunction::sample(g.clone(), |p| 1.0 + p.x());
        let v = GridFunction::sample(g, |p| 2.0 * (1.0 + p.x()));
        assert!((v.g_norm(&w) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn csv_layout() {
        let f = GridFunction::constant(grid1(), 2.5);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "x0,value,boundary");
        assert_eq!(lines.len(), 1 + 9 + 1);
        assert_eq!(lines[10], "0,2.5,1");
    }

    proptest! {
        #[test]
        fn interpolation_is_monotone(
            base in prop::collection::vec(-5.0f64..5.0, 9),
            bump in prop::collection::vec(0.0f64..1.0, 9),
            q in 0.0f64..1.0,
        ) {
            let g = grid1();
            let lo = GridFunction::new(g.clone(), base.clone(), vec![0.0]).unwrap();
            let hi_vals: Vec<f64> = base.iter().zip(&bump).map(|(a, b)| a + b).collect();
            let hi = GridFunction::new(g, hi_vals, vec![0.0]).unwrap();
            let p = Point::scalar(q);
            prop_assert!(lo.eval(&p) <= hi.eval(&p) + 1e-15);
        }

        #[test]
        fn stencil_weights_sum_to_one(a in -1.0f64..2.0, b in -1.0f64..2.0) {
            let g = StateGrid::tensor(&model(2), vec![vec![0.2, 0.5, 0.8], vec![0.1, 0.9]]).unwrap();
            let s: f64 = g.stencil(&Point::new(&[a, b])).iter().map(|(_, w)| w).sum();
            prop_assert!((s - 1.0).abs() < 1e-14);
        }
    }
}

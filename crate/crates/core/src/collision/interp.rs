//! Local Lagrange interpolation of plane functions at off-grid velocities.
//!
//! Four axial lines nearest to `ξ1` are combined; on each line the four
//! nearest nodes in `t = r²/2` are used. Values beyond the last node of a
//! line are clamped, values below the first node are extrapolated (smooth
//! functions of `|ξ|²` are polynomial in `t`).

use crate::velocity::PlaneGrid;

const ORDER: usize = 4;

/// Up to 16 `(plane node, weight)` pairs.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    pub len: usize,
    pub nodes: [usize; ORDER * ORDER],
    pub weights: [f64; ORDER * ORDER],
}

impl Stencil {
    pub fn eval(&self, f: &[f64]) -> f64 {
        (0..self.len)
            .map(|k| self.weights[k] * f[self.nodes[k]])
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct PlaneInterpolator {
    /// axial rule indices that hold at least one node, ascending
    lines: Vec<usize>,
    axial: Vec<f64>,
    /// per axial line: t values and plane ids of kept nodes
    line_t: Vec<Vec<f64>>,
    line_ids: Vec<Vec<usize>>,
}

fn window(values: &[f64], x: f64, width: usize) -> usize {
    let n = values.len();
    if n <= width {
        return 0;
    }
    let pos = values.partition_point(|&v| v < x);
    let start = pos.saturating_sub(width / 2);
    start.min(n - width)
}

fn lagrange(nodes: &[f64], x: f64, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate().take(nodes.len()) {
        let mut w = 1.0;
        for (l, &z) in nodes.iter().enumerate() {
            if l != j {
                w *= (x - z) / (nodes[j] - z);
            }
        }
        *o = w;
    }
}

impl PlaneInterpolator {
    pub fn new(plane: &PlaneGrid) -> Self {
        let mut lines = Vec::new();
        let mut line_t = Vec::new();
        let mut line_ids = Vec::new();
        for (i, row) in plane.lookup.iter().enumerate() {
            let mut ts = Vec::new();
            let mut ids = Vec::new();
            for (j, id) in row.iter().enumerate() {
                if let Some(id) = id {
                    ts.push(plane.radial_rule[j]);
                    ids.push(*id);
                }
            }
            if !ids.is_empty() {
                lines.push(i);
                line_t.push(ts);
                line_ids.push(ids);
            }
        }
        let axial = lines.iter().map(|&i| plane.axial_rule[i]).collect();
        PlaneInterpolator {
            lines,
            axial,
            line_t,
            line_ids,
        }
    }

    pub fn stencil(&self, x1: f64, t: f64) -> Stencil {
        let mut st = Stencil {
            len: 0,
            nodes: [0; ORDER * ORDER],
            weights: [0.0; ORDER * ORDER],
        };
        let n_lines = self.lines.len();
        let width = ORDER.min(n_lines);
        let x1c = x1.clamp(self.axial[0], self.axial[n_lines - 1]);
        let start = window(&self.axial, x1c, width);
        let mut wa = [0.0; ORDER];
        lagrange(&self.axial[start..start + width], x1c, &mut wa);
        for (k, &w_line) in wa.iter().enumerate().take(width) {
            let line = start + k;
            let ts = &self.line_t[line];
            let wt_count = ORDER.min(ts.len());
            let tc = t.min(ts[ts.len() - 1]);
            let s = window(ts, tc, wt_count);
            let mut wr = [0.0; ORDER];
            lagrange(&ts[s..s + wt_count], tc, &mut wr);
            for (q, &w_t) in wr.iter().enumerate().take(wt_count) {
                st.nodes[st.len] = self.line_ids[line][s + q];
                st.weights[st.len] = w_line * w_t;
                st.len += 1;
            }
        }
        st
    }
}

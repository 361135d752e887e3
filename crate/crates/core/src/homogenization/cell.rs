use crate::error::{Error, Result};
use crate::fem::{element_tensors, CsrMatrix, FactoredSystem, TensorCoefficient};
use crate::geometry::Rect;
use crate::mesh::{build_uniform_mesh, TriMesh};
use crate::tensor::{EffectiveTensor, SymTensor};

/// Periodic correctors on a square cell.
#[derive(Debug, Clone)]
pub struct CellSolution {
    /// Periodic grid, with lines possibly shifted onto interfaces.
    pub mesh: TriMesh,
    /// `χ₁`, `χ₂` at every mesh node (periodic copies included).
    pub correctors: [Vec<f64>; 2],
}

impl CellSolution {
    /// `|Y|⁻¹ ∫_Y χ_k` by the edge-midpoint rule.
    pub fn mean(&self, k: usize) -> f64 {
        let m = &self.mesh;
        let chi = &self.correctors[k];
        let mut acc = 0.0;
        for t in 0..m.num_triangles() {
            let [a, b, c] = m.triangles[t];
            acc += m.area(t) * (chi[a] + chi[b] + chi[c]) / 3.0;
        }
        acc / m.rect.area()
    }

    /// Largest mismatch between values on opposite edges of the cell.
    pub fn periodic_mismatch(&self) -> f64 {
        let n = self.mesh.n;
        let mut worst = 0.0f64;
        for chi in &self.correctors {
            for s in 0..=n {
                let (l, r) = (self.mesh.node_index(0, s), self.mesh.node_index(n, s));
                let (b, t) = (self.mesh.node_index(s, 0), self.mesh.node_index(s, n));
                worst = worst.max((chi[l] - chi[r]).abs()).max((chi[b] - chi[t]).abs());
            }
        }
        worst
    }
}

/// Moves the grid line nearest to each interface onto it. Boundary lines stay
/// put, so the mesh remains periodic but is no longer uniform.
fn fit_interfaces(mesh: &mut TriMesh, interfaces: &[Vec<f64>; 2]) {
    let n = mesh.n;
    let np = n + 1;
    for (axis, lines) in interfaces.iter().enumerate() {
        let (lo, hi) = (mesh.rect.min[axis], mesh.rect.max[axis]);
        let step = (hi - lo) / n as f64;
        let mut moved = vec![false; np];
        for &c in lines {
            let s = (c - lo) / step;
            let i = s.round();
            if !(i >= 1.0 && i <= (n - 1) as f64) || (s - i).abs() < 1e-12 {
                continue;
            }
            let i = i as usize;
            if moved[i] {
                continue;
            }
            moved[i] = true;
            for j in 0..np {
                let k = if axis == 0 { j * np + i } else { i * np + j };
                mesh.nodes[k][axis] = c;
            }
        }
    }
}

/// Solves `−∇·(a(e_k + ∇χ_k)) = 0` with periodic `χ_k` of zero mean on the
/// square `cell`, using `n × n` P1 cells, and returns `⟨a(I + ∇χ)⟩`. Grid
/// lines are aligned with the coefficient's interfaces.
pub fn solve_periodic_cell(
    cell: Rect,
    n: usize,
    coefficient: &dyn TensorCoefficient,
) -> Result<(CellSolution, EffectiveTensor)> {
    if n < 2 {
        return Err(Error::arg("periodic cell needs at least two elements per side"));
    }
    let mut mesh = build_uniform_mesh(n, cell)?;
    fit_interfaces(&mut mesh, &coefficient.interfaces());
    let tensors = element_tensors(&mesh, coefficient);
    let np = n + 1;
    let dof = |k: usize| {
        let (i, j) = (k % np, k / np);
        (j % n) * n + (i % n)
    };
    let nd = n * n;
    let mut triplets = Vec::with_capacity(9 * mesh.num_triangles());
    let mut load = [vec![0.0; nd], vec![0.0; nd]];
    for t in 0..mesh.num_triangles() {
        let (g, area) = mesh.gradients(t);
        let a = &tensors[t];
        let tri = mesh.triangles[t];
        for i in 0..3 {
            let di = dof(tri[i]);
            for j in 0..3 {
                triplets.push((di, dof(tri[j]), area * a.form(g[i], g[j])));
            }
            let ag = a.apply(g[i]);
            load[0][di] -= area * ag[0];
            load[1][di] -= area * ag[1];
        }
    }
    let k = CsrMatrix::from_triplets(nd, nd, &triplets);
    // pin one dof to remove the constants, then shift to zero mean
    let mut pinned = vec![false; nd];
    pinned[0] = true;
    let factored = FactoredSystem::new(&k, &pinned)?;
    let zero = vec![0.0; nd];
    let sols = factored
        .solve_many(&[&load[0], &load[1]], &[&zero, &zero])
        .map_err(|e| e.context("periodic cell problem"))?;
    let mut sol = CellSolution {
        correctors: [
            (0..mesh.num_nodes()).map(|k| sols[0][dof(k)]).collect::<Vec<_>>(),
            (0..mesh.num_nodes()).map(|k| sols[1][dof(k)]).collect::<Vec<_>>(),
        ],
        mesh,
    };
    for c in 0..2 {
        let mean = sol.mean(c);
        sol.correctors[c].iter_mut().for_each(|v| *v -= mean);
    }
    let (mesh, correctors) = (&sol.mesh, &sol.correctors);
    // A_jk = ⟨a(e_j + ∇χ_j)·(e_k + ∇χ_k)⟩
    let mut acc = [[0.0; 2]; 2];
    for t in 0..mesh.num_triangles() {
        let (g, area) = mesh.gradients(t);
        let tri = mesh.triangles[t];
        let mut w = [[1.0, 0.0], [0.0, 1.0]];
        for (c, chi) in correctors.iter().enumerate() {
            for (l, &node) in tri.iter().enumerate() {
                w[c][0] += chi[node] * g[l][0];
                w[c][1] += chi[node] * g[l][1];
            }
        }
        for (r, row) in acc.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell += area * tensors[t].form(w[r], w[c]);
            }
        }
    }
    let vol = mesh.rect.area();
    let a = SymTensor::symmetrize([[acc[0][0] / vol, acc[0][1] / vol], [acc[1][0] / vol, acc[1][1] / vol]]);
    Ok((sol, a))
}

/// Numerical homogenization on the unit cell with spacing `k`.
pub fn solve_cell_numeric(
    coefficient: &dyn TensorCoefficient,
    k: f64,
) -> Result<(CellSolution, EffectiveTensor)> {
    if !(k > 0.0 && k <= 1.0 / 16.0) {
        return Err(Error::arg(format!("cell spacing k = {k} must lie in (0, 1/16]")));
    }
    solve_periodic_cell(Rect::unit(), (1.0 / k).round() as usize, coefficient)
}

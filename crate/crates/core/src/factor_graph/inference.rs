use crate::exec::Execution;

use super::envelope::{EnvelopeCholesky, SymmetricRows};
use super::refine::refine;
use super::{Evidence, FactorGraph, FactorGraphError, Posterior, VariableId};

/// Exact posterior of every variable in `graph`.
pub fn infer(graph: &FactorGraph) -> Result<Posterior, FactorGraphError> {
    infer_with(graph, Execution::default())
}

pub fn infer_with(graph: &FactorGraph, exec: Execution) -> Result<Posterior, FactorGraphError> {
    let (h, eta) = graph.assemble();
    let free: Vec<usize> = (0..h.len()).collect();
    solve_system(graph, &free, vec![0.0; h.len()], &h, &eta, exec)
}

/// Posterior of the variables not fixed by `evidence`.
///
/// With `u` the free and `e` the evidence block, the conditional is the
/// canonical form `(H_uu, η_u − H_ue x_e)`.
pub fn condition(graph: &FactorGraph, evidence: &Evidence) -> Result<Posterior, FactorGraphError> {
    condition_with(graph, evidence, Execution::default())
}

pub fn condition_with(
    graph: &FactorGraph,
    evidence: &Evidence,
    exec: Execution,
) -> Result<Posterior, FactorGraphError> {
    let n = graph.variable_count();
    if let Some((bad, _)) = evidence.iter().find(|(v, _)| v.0 >= n) {
        return Err(FactorGraphError::UnknownVariable(bad.to_string()));
    }
    let (h, eta) = graph.assemble();

    let mut fixed = vec![None; n];
    for (v, value) in evidence.iter() {
        fixed[v.0] = Some(value);
    }
    let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();

    let mut reduced_eta: Vec<f64> = free.iter().map(|&i| eta[i]).collect();
    let mut free_position = vec![usize::MAX; n];
    for (p, &i) in free.iter().enumerate() {
        free_position[i] = p;
    }
    for (i, j, v) in h.lower_entries() {
        if i == j || v == 0.0 {
            continue;
        }
        match (fixed[i], fixed[j]) {
            (None, Some(xj)) => reduced_eta[free_position[i]] -= v * xj,
            (Some(xi), None) => reduced_eta[free_position[j]] -= v * xi,
            _ => {}
        }
    }

    let reduced = h.submatrix(&free);
    let full: Vec<f64> = fixed.iter().map(|v| v.unwrap_or(0.0)).collect();
    solve_system(graph, &free, full, &reduced, &reduced_eta, exec)
}

/// Solves the system on the `free` variables; `full` carries the values of
/// the fixed ones and receives the refined solution.
fn solve_system(
    graph: &FactorGraph,
    free: &[usize],
    mut full: Vec<f64>,
    h: &SymmetricRows,
    eta: &[f64],
    exec: Execution,
) -> Result<Posterior, FactorGraphError> {
    // A variable with no precision at all is never reached by any factor.
    if let Some(p) = (0..h.len()).find(|&p| h.diagonal(p) <= 0.0) {
        return Err(FactorGraphError::UnderDetermined {
            variable: graph.label(VariableId(free[p])).to_string(),
        });
    }
    let chol = EnvelopeCholesky::factor(h).map_err(|failure| FactorGraphError::UnderDetermined {
        variable: graph.label(VariableId(free[failure.original_index])).to_string(),
    })?;
    for (&v, m) in free.iter().zip(chol.solve(eta)) {
        full[v] = m;
    }
    refine(graph, &chol, &mut full, free);
    let mean = free.iter().map(|&v| full[v]).collect();
    let variance = exec.map_range(h.len(), |j| chol.inverse_diagonal_entry(j).max(0.0));
    Ok(Posterior::new(free.iter().map(|&v| VariableId(v)).collect(), mean, variance))
}

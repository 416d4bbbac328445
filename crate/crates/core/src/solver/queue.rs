//! Second-order sampling with one predictor call per grid point.
//!
//! After a first-order warm-up from `t_0` to `t_1`, each window spans two
//! grid intervals `[t_{j-1}, t_{j+1}]`: it starts from the queued state at
//! `t_{j-1}`, reuses the queued evaluation there, evaluates once at `t_j`,
//! and combines both with second-order weights where `t_j` plays the role of
//! the intermediate point.

use std::collections::VecDeque;

use super::step::{first_with, second_with};
use super::{check_grid, check_inputs, Evaluation, Evaluator, QueueMode, SolverConfig, Trajectory};
use crate::error::{Error, Result};
use crate::predictors::Predictor;
use crate::schedule::Schedule;
use crate::tensor::TensorField;

struct Entry {
    state: TensorField,
    eval: Evaluation,
}

/// Queue-based sampler over `time_grid(cfg.steps)`; `cfg.order` must be 2.
pub fn queue_solve(
    cfg: &SolverConfig,
    initial: &TensorField,
    input: &TensorField,
    predictor: &dyn Predictor,
    schedule: &Schedule,
) -> Result<Trajectory> {
    let cfg = SolverConfig { queue: true, ..*cfg };
    cfg.validate()?;
    let grid = schedule.time_grid(cfg.steps)?;
    queue_solve_grid(&cfg, &grid, initial, input, predictor, schedule)
}

pub fn queue_solve_grid(
    cfg: &SolverConfig,
    grid: &[f64],
    initial: &TensorField,
    input: &TensorField,
    predictor: &dyn Predictor,
    schedule: &Schedule,
) -> Result<Trajectory> {
    if cfg.order != 2 {
        return Err(Error::InvalidConfig(format!(
            "queue sampling requires order 2, got {}",
            cfg.order
        )));
    }
    check_inputs(initial, input)?;
    check_grid(grid, schedule)?;
    if grid.len() < 3 {
        return Err(Error::InvalidConfig(
            "queue sampling needs at least two steps".into(),
        ));
    }
    let mut ev = Evaluator::new(predictor, input, schedule, cfg.ups_weight());
    let mut traj = Trajectory::start(grid[0], initial.clone());

    let e0 = ev.eval(initial, grid[0])?;
    let mut next = first_with(&ev, initial, &e0, grid[1])?;
    traj.push(grid[1], next.clone(), ev.evals());
    let mut queue = VecDeque::from([Entry {
        state: initial.clone(),
        eval: e0,
    }]);

    for j in 1..grid.len() - 1 {
        let prev = queue.pop_front().expect("queue holds the previous grid point");
        let mid_state = match cfg.queue_mode {
            QueueMode::Window => next,
            QueueMode::Literal => first_with(&ev, &prev.state, &prev.eval, grid[j])?,
        };
        let mid = ev.eval(&mid_state, grid[j])?;
        next = second_with(&ev, &prev.state, &prev.eval, &mid, grid[j + 1])?;
        traj.push(grid[j + 1], next.clone(), ev.evals());
        queue.push_back(Entry {
            state: mid_state,
            eval: mid,
        });
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::{make_constant_predictor, make_polynomial_predictor};
    use crate::schedule::{build_schedule, ScheduleConfig};
    use crate::solver::solve;

    fn cfg(steps: usize) -> SolverConfig {
        SolverConfig {
            steps,
            ups: false,
            queue: true,
            ..Default::default()
        }
    }

    #[test]
    fn counts_one_eval_per_grid_point() {
        let s = build_schedule(ScheduleConfig::default()).unwrap();
        let p = make_constant_predictor(0.1, Some(0.2));
        let x = TensorField::scalar(0.3).unwrap();
        for m in [2, 3, 8, 17] {
            let tr = queue_solve(&cfg(m), &x, &x, &p, &s).unwrap();
            assert_eq!(tr.eval_count, m);
            assert_eq!(tr.records.len(), m + 1);
            let naive = solve(&SolverConfig { queue: false, ..cfg(m) }, &x, &x, &p, &s).unwrap();
            assert_eq!(naive.eval_count, 2 * m);
            assert!(tr.final_state().max_abs_diff(naive.final_state()).unwrap() < 1e-12);
        }
        assert!(queue_solve(&cfg(1), &x, &x, &p, &s).is_err());
    }

    #[test]
    fn even_chain_is_exact_for_linear_predictions() {
        // Even grid points descend from the initial state through
        // second-order windows only; odd points carry the warm-up error.
        let s = build_schedule(ScheduleConfig::default()).unwrap();
        let p = make_polynomial_predictor(vec![0.2, 1.0], vec![-0.1, 0.5]).unwrap();
        let x = TensorField::scalar(0.0).unwrap();
        let grid = [1.0, 0.9, 0.55, 0.5, 0.2, 0.1, 0.0];
        let tr = queue_solve_grid(&cfg(6), &grid, &x, &x, &p, &s).unwrap();
        // integral of 0.2 + a over alpha in [1, 0] plus -0.1 + 0.5 b over beta in [1, 0]
        let exact = -(0.2 + 0.5) - (-0.1 + 0.25);
        assert!((tr.final_state().data()[0] - exact).abs() < 1e-12);
    }

    #[test]
    fn literal_mode_agrees_on_constants() {
        let s = build_schedule(ScheduleConfig::default()).unwrap();
        let p = make_constant_predictor(-0.3, Some(0.7));
        let x = TensorField::from_vec(vec![0.4, -1.0]).unwrap();
        let iin = TensorField::from_vec(vec![0.5, 0.6]).unwrap();
        let a = queue_solve(&cfg(8), &x, &iin, &p, &s).unwrap();
        let lit = SolverConfig { queue_mode: QueueMode::Literal, ..cfg(8) };
        let b = queue_solve(&lit, &x, &iin, &p, &s).unwrap();
        assert_eq!(b.eval_count, 8);
        assert!(a.final_state().max_abs_diff(b.final_state()).unwrap() < 1e-12);
    }
}

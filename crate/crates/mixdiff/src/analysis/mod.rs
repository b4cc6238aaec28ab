//! Diagnostics for the interpolation mechanism: sample classification,
//! critical times, tube convergence, equilibria and spectra, trapping and
//! escape, and score-error sensitivity.

mod assumptions;
mod bound;
mod brownian;
mod classify;
mod convergence;
mod decomposition;
mod diagonal;
mod equilibria;
mod perturbation;
mod stats;
mod trapping;

pub use assumptions::{
    detect_tau1, detect_tau2, dominance_ratio, min_separation, suffix_minima, tau1_from_suffix, AssumptionReport, DominanceObserver, Tau1Table,
};
pub use bound::{bisector_terminals, ddpm_terminal_bound, drift_bounds_from, estimate_drift_bounds, DdpmBoundInputs, DriftBoundConfig};
pub use brownian::{brownian_confinement_check, confinement_bound, ConfinementCheck};
pub use classify::{classify_sample, classify_threshold, Classifier, Label, LabelCounts};
pub use convergence::{fit_tube_convergence, rescaled_tube_distance, ConvergenceFit, TubeObserver, TubeSeries};
pub use decomposition::{midpoint_event_decomposition, DecompositionTable, MidpointVisits};
pub use diagonal::{cell_diagonals, DiagonalObserver, DiagonalReport};
pub use equilibria::{
    analytic_lambda, bisect, find_mode_equilibria, full_saddle, midpoint_eigenvalues, parallel_drift, saddle_displacement, two_mode_saddle,
    Equilibrium, MidpointSpectrum, ModeEquilibria, SaddleComparison,
};
pub use perturbation::{
    escape_condition, measure_error_field, perturbation_analysis, segment_points, EscapeCheck, Field, PerturbationReport, ScoreErrorSpec,
};
pub use stats::{least_squares, mean_se, LinearFit, Proportion};
pub use trapping::{parallel_flow_excursion, trap_offsets, trapping_experiment, TrapOutcome, TrapResult, TrappingSpec};

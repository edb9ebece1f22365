//! Numerical checks of the averaging machinery and convergence metrics of trajectories.

mod decay;
mod expansion;
mod lemma1;
mod sigma;

pub use decay::{decay_check, decay_envelope, fit_decay, fit_decay_trace, DecayEnvelope, DecayFit, DecayReport, DecayStep};
pub use expansion::{
    chen_fliess_terms, chen_fliess_truncation, iterated_integral, log_log_slope, remainder_scaling,
    second_order_remainder, single_integral, stabilizer_step_remainder, RemainderScaling, SeriesTerms,
};
pub use lemma1::{dither_nu, lemma1_bound_check, Lemma1Report};
pub use sigma::{estimate_sigma, estimate_sigma_raw, SigmaBounds, SIGMA_SAFETY};

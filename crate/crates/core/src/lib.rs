//! Generalized filtrations on a dyadic time grid, and a binomial market
//! priced through them.
//!
//! A filtration here is a functor from the grid category (one arrow `t -> s`
//! whenever `s <= t`) into finite probability spaces of coin-toss paths, with
//! a null-preserving map on every arrow. Beyond the classical `Full`
//! filtration, `Drop` filtrations forget the coin at selected times. On top of
//! that the crate builds stock and bond processes, risk-neutral measures,
//! claim prices, replication strategies, arbitrage detection and experienced
//! paths, all checkable by exhaustive enumeration.

// `!(x > 0.0)` rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod binomial_filtration;
pub mod experienced;
pub mod market;
pub mod prob_core;
pub mod risk_neutral;
pub mod timegrid;
pub mod valuation;

pub use binomial_filtration::{
    check_functor_laws, make_drop_filtration, make_full_filtration, BernoulliParams, BinomialFiltration,
    EnumerationCap, Filtration, FiltrationKind, Path,
};
pub use experienced::{experienced_path, naturality_check, tilde_filtration, TildeFiltration};
pub use market::{
    bond_process, detect_arbitrage, discounted_stock, gain_process, is_arbitrage, is_self_financing, portfolio_value,
    stock_process, AdaptedProcess, MarketParams, Strategy,
};
pub use prob_core::{
    conditional_expectation, expectation, FinProbSpace, ProbMorphism, RandomVariable, EPS_EQ, EPS_MASS,
};
pub use risk_neutral::{
    build_rn_drop, build_rn_full, equivalence_witnesses, martingale_check, martingale_constants, q_star,
    qcond_equivalences, verify_null_preserving_under_q, FreeQ, MeasureFamily, QFunction, RiskNeutralFiltration,
};
pub use timegrid::{arrow, GridTime, TimeArrow};
pub use valuation::{
    g_factorize, price, price_lattice, replicate, replication_check, Claim, PriceLattice, Replication,
};

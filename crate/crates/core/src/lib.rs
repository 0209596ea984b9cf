//! Regularized structural equation modeling.
//!
//! Models are written in a lavaan-style syntax ([`syntax`]), compiled to RAM
//! matrices ([`ram`]), and fit by minimizing the maximum-likelihood discrepancy
//! plus a penalty ([`penalty`]) with proximal gradient methods ([`optim`]).
//! [`select`] runs a penalty path and picks a final model by BIC or RMSEA.
//!
//! ```
//! use sempath::prelude::*;
//!
//! let spec = parse_model("f =~ y1 + y2 + y3").unwrap();
//! let ram = build_ram(&spec, &["y1".into(), "y2".into(), "y3".into()]).unwrap();
//! assert_eq!(ram.n_params(), 6);
//! ```

pub mod cli;
pub mod data;
pub mod optim;
pub mod penalty;
pub mod ram;
pub mod select;
pub mod simulate;
pub mod syntax;

pub mod prelude {
    pub use crate::data::{CovDivisor, SampleMoments};
    pub use crate::optim::{
        fit_penalized, multi_start_fit, Convergence, FitResult, Method, OptimizerConfig,
    };
    pub use crate::penalty::{PenaltyConfig, PenaltyKind};
    pub use crate::ram::{build_ram, implied_moments, ml_discrepancy, RamModel};
    pub use crate::select::{run_path, Metric, PathConfig, PathResult};
    pub use crate::syntax::{parse_model, ModelSpec};
}

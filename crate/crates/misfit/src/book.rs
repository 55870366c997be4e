//! Runs every example in the user guide (`book/`) as a doctest, so the
//! guide can never drift from the crate's actual API.

#[doc = include_str!("../../../book/src/overview.md")]
mod overview {}

#[doc = include_str!("../../../book/src/data-model.md")]
mod data_model {}

#[doc = include_str!("../../../book/src/estimation.md")]
mod estimation {}

#[doc = include_str!("../../../book/src/imputation.md")]
mod imputation {}

#[doc = include_str!("../../../book/src/pooling.md")]
mod pooling {}

#[doc = include_str!("../../../book/src/experiments.md")]
mod experiments {}

#[doc = include_str!("../../../book/src/cli.md")]
mod cli {}

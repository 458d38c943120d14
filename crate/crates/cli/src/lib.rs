//! Command-line harness: dataset and checkpoint stores, experiment
//! configuration, reports and the subcommands behind the `msno` binary.

pub mod commands;
pub mod config;
pub mod io;
pub mod report;

/// `MSNO_STRICT_DETERMINISM=1` forces single-threaded execution.
pub fn strict_determinism() -> bool {
    std::env::var("MSNO_STRICT_DETERMINISM").is_ok_and(|v| v == "1")
}

/// Size the global thread pool from `MSNO_THREADS` and
/// `MSNO_STRICT_DETERMINISM`. Reductions are ordered either way; the strict
/// mode also rules out any scheduling effects.
pub fn init_threads() {
    let threads = if strict_determinism() {
        Some(1)
    } else {
        std::env::var("MSNO_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0)
    };
    if let Some(n) = threads {
        // Fails only if the pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Short machine-readable category for an error.
pub fn error_kind(e: &anyhow::Error) -> &'static str {
    use msno_core::Error as E;
    if let Some(io) = e.downcast_ref::<io::IoError>() {
        return match io {
            io::IoError::Checksum { .. } => "checksum",
            io::IoError::Schema { .. } => "schema_version",
            io::IoError::Missing { .. } => "missing_file",
            io::IoError::Malformed { .. } => "malformed",
            io::IoError::Fs { .. } => "io",
            io::IoError::Json { .. } => "json",
            io::IoError::Core(c) => core_kind(c),
        };
    }
    if let Some(c) = e.downcast_ref::<E>() {
        return core_kind(c);
    }
    "error"
}

fn core_kind(e: &msno_core::Error) -> &'static str {
    use msno_core::Error as E;
    match e {
        E::Config(_) => "config",
        E::Shape { .. } => "shape",
        E::NonPositiveCoefficient { .. } => "non_positive_coefficient",
        E::Factorization { .. } => "factorization",
        E::NotPsd { .. } => "not_psd",
        E::DegenerateField { .. } => "degenerate_field",
        E::EigenResidual { .. } => "eigen_residual",
        E::SingularCoarse(_) => "singular_coarse",
        E::ZeroVector(_) => "zero_vector",
        E::UndefinedMetric(_) => "undefined_metric",
        E::NonFinite(_) => "non_finite",
        E::SelfCheck(_) => "self_check",
    }
}

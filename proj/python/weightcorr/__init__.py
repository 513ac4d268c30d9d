"""Weight correlation measures, penalties and generalisation measures."""

from ._weightcorr import (
    FormatError,
    IoError,
    NumericError,
    UsageError,
    filter_heatmap,
    g_gradient_bracket,
    g_term,
    gaussian_kl,
    generalisation_error,
    kendall_tau,
    kl_layer,
    measure_checkpoint,
    pac_bayes_bound,
    posterior_covariance,
    rho_gradient,
    selftest,
    spectral_norm,
    wc_cnn,
    wc_fcn,
    wcd_gradient,
)

__all__ = [
    "FormatError",
    "IoError",
    "NumericError",
    "UsageError",
    "filter_heatmap",
    "g_gradient_bracket",
    "g_term",
    "gaussian_kl",
    "generalisation_error",
    "kendall_tau",
    "kl_layer",
    "measure_checkpoint",
    "pac_bayes_bound",
    "posterior_covariance",
    "rho_gradient",
    "selftest",
    "spectral_norm",
    "wc_cnn",
    "wc_fcn",
    "wcd_gradient",
]

"""Model-based clustering of matrix-variate data with iterative outlier trimming."""

from .data import DataSet
from .em import FitConfig, FitResult, MixtureModel, e_step, fit, kmeans_init, loglik, m_step, simplified_loglik
from .matnorm import ComponentParams, log_density, mahalanobis, normalize_identifiability, sample
from .nullmodel import NullGammaMixture, gamma_shift, kl_divergence, null_density, subset_logliks
from .simgen import SimConfig, gen_tomarchio, gen_viroli, generate, rand_corr
from .trimmer import candidate_outlier, gross_outlier_filter, run_oclust

__version__ = "0.1.0"

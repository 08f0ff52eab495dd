"""Anomaly detection with surrogate anomalies drawn from a normalizing flow's latent tail."""

from .classifier import ClfTrainConfig, MlpClassifier, clf_loss, clf_score, clf_step, train_classifier
from .dataeval import (ANOMALY, NORMAL, DensityGrid, LabeledDataset, Standardizer, density_grid, ingest_csv,
                       make_moons, roc_auc, split, subsample_anomalies)
from .flows import AffineCoupling, FlowStack, Permutation, RQSCoupling, stack_logprob, stack_sample
from .gradnet import DiffNet, OptState, adamw_step, grad_check
from .ndmath import RngState, chi2_tail_quantile, finite_diff_jacobian, sample_std_normal, std_normal_logpdf
from .nftrain import NfTrainConfig, TrainTrace, jac_reg, lambda_at, nll_loss, train_flow
from .persist import load_model, save_model
from .tailgen import TailSpec, gen_surrogates, sample_tail_latents

__version__ = "0.1.0"

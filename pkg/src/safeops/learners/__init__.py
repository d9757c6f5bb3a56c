"""SV-OPS, S-OPS and CV-OPS learners."""
from .core import OMDLearner, Oracle, default_rate, loss_estimator
from .cvops import (CVOPS, AnytimePrimal, DegenerateEstimate, build_mixture_policy,
                    cvops_step, cvops_stopping_condition, estimate_slater)
from .svops import (SOPS, SVOPS, initial_mixing, sops_mixing_probability, sops_step,
                    svops_step)

__all__ = ["OMDLearner", "Oracle", "default_rate", "loss_estimator", "CVOPS", "AnytimePrimal",
           "DegenerateEstimate", "build_mixture_policy", "cvops_step", "cvops_stopping_condition",
           "estimate_slater", "SOPS", "SVOPS", "initial_mixing", "sops_mixing_probability",
           "sops_step", "svops_step"]

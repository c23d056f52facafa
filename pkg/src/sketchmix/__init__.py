"""Compressive Gaussian mixture estimation from characteristic-function sketches.

A dataset is compressed into a fixed-size vector of sampled characteristic
function values (the sketch), and a diagonal-covariance Gaussian mixture is
recovered from that sketch alone by greedy atom selection.  Sketches are
streaming and mergeable, the frequency sampling pattern is designed from a
small slice of the data, and companion calculators evaluate the theoretical
sketch sizes required for stable recovery.
"""

__version__ = "0.1.0"

from .bounds import (BoundValue, ParamDomain, covering_bound_gauss,
                     covering_bound_gmm, covering_bound_mixture,
                     domination_constant, sketch_size_gmm,
                     sketch_size_single_gauss)
from .evaluate import (SyntheticProblem, em_baseline, gen_synthetic,
                       kl_sym_mc, mmd_mc)
from .freqdesign import (FreqKind, FrequencySet, RadiusTable,
                         adapted_radius_cdf_build, design_frequencies,
                         draw_freq, estim_mean_sigma, read_freqs,
                         sample_radius, write_freqs)
from .model import (VARIANCE_FLOOR, Dataset, GaussianParams, Mixture,
                    gauss_charfn, gauss_charfn_grad, gauss_kl, gauss_logpdf,
                    mixture_logpdf, mixture_sample, read_gmm, write_gmm)
from .recovery import (Algorithm, DegenerateAtomError, RecoveryConfig,
                       RecoveryTrace, SupportState, box_minimize, cl_omp,
                       cl_split, find_atom, global_adjust, hard_threshold,
                       nnls, split_support)
from .sketch import (FingerprintMismatch, Sketch, SketchAccumulator,
                     read_data, read_sketch, sketch_atom, sketch_empirical,
                     sketch_gmm, sketch_merge, stream_data, write_data,
                     write_sketch)

__all__ = [name for name in dir() if not name.startswith("_")]

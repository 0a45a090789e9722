"""Signal recovery from autocorrelations of long noisy observations.

Modules: ``core`` (types and artifacts), ``synth`` (simulation), ``acc``
(streaming moment estimation), ``forward`` (moment models and debiasing),
``homo`` (closed-form K = 1 recovery), ``hetero`` (least-squares recovery),
``phase2d`` (image recovery by phase retrieval), ``eval`` (alignment and
counting) and ``cli``.
"""

__version__ = "0.1.0"

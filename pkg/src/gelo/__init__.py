"""GELO: invertible per-batch mixing of hidden states before GEMM offload.

The trusted side samples a fresh invertible matrix A for every batch, ships
U = A @ H to an untrusted GEMM helper, and recovers H @ W from the reply by
applying the inverse.  Submodules:

- numerics: samplers, solves, assignment
- protocol: mix/unmix, shield padding, batching-time defenses
- synthdata: synthetic hidden-state and token-stream generators
- attacks: anchor-regression and blind-source-separation adversary toolkit
- metrics: recovery/leakage metrics and the offload crossover model
- harness: binary wire framing and the two-process offload simulator
- cli: command-line entry points
"""

__version__ = "0.1.0"

from . import errors  # noqa: F401

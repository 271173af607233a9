"""Swapping backends over the wire protocol.

Any process that speaks the newline-JSON protocol can serve as the density
backend. Here the reference backend is served from a child process over its
stdio and produces bit-identical results to the in-process version; attach a
real TabPFN server the same way with
``make_backend("bridge:python -m tabpfn_bridge")``.
"""

import sys

import numpy as np

from icsbi import ContextSet, ReferenceBackend, make_backend

rng = np.random.default_rng(0)
feats = rng.standard_normal((100, 2))
context = ContextSet(features=feats, targets=feats @ np.array([1.0, -0.5]))
queries = rng.standard_normal((3, 2))

direct = ReferenceBackend()
remote = make_backend(f"bridge:{sys.executable} -m icsbi.backends.server")
print(f"peer capabilities: context<={remote.capabilities.max_context}, "
      f"features<={remote.capabilities.max_features}")

for i, (d, r) in enumerate(
    zip(direct.regress_predict(context, queries), remote.regress_predict(context, queries))
):
    same = np.array_equal(d.log_density, r.log_density)
    print(f"query {i}: predictive mean {r.mean():+.3f}, bitwise identical to in-process: {same}")

remote.shutdown()

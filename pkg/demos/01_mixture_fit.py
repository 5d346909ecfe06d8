"""
Fitting a uniform-weight mixture to one slide
==============================================

A slide is a bag of patch embeddings. Here we draw one from three blobs,
fit a four-component mixture with the weights pinned at 1/4, and watch
the log-likelihood climb.
"""
import numpy as np

from fedhd import gmm
from fedhd.numeric import spawn_stream

rng = np.random.default_rng(0)
centres = rng.normal(size=(3, 2)) * 4
patches = centres[rng.integers(0, 3, 300)] + rng.normal(size=(300, 2))

model, resp, trace = gmm.fit_gmm(patches, 4, rng=spawn_stream(0, 0), return_trace=True)

print("EM iterations:", len(trace))
print("log-likelihood, first and last:", round(trace[0], 2), round(trace[-1], 2))
print("never decreases:", bool(np.all(np.diff(trace) >= -1e-8)))
print("weights:", model.weights)

# Each row of ``resp`` is a distribution over components.
print("row sums:", resp.sum(axis=1)[:5])

# Means and covariances are what distillation will try to reproduce.
for m, (mean, cov) in enumerate(gmm.component_moments(model)):
    print(f"component {m}: mean {np.round(mean, 2)}, trace(cov) {np.trace(cov):.2f}")

# Too few patches for the requested M shrinks the mixture.
small, _ = gmm.fit_gmm(patches[:6], 4, rng=spawn_stream(0, 1))
print("components fitted to 6 patches:", small.n_components)

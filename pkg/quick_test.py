"""Quick smoke check of the closed-form core."""
import math

import numpy as np

from src.losses import expected_log_likelihood
from src.mc_oracle import mc_expected_loglik, z_score
from src.natpn import Evidence, posterior_update
from src.sphere_core import RandomStream
from src.vmf import VmfParams, entropy

print("🧪 Checking the vMF core...")
print("=" * 60)

try:
    prior = VmfParams(np.array([0.0, 0.0, 1.0]), 1.0)
    post = posterior_update(prior, np.array([1.0, 0.0, 0.0]), Evidence(3.0))
    print(f"Posterior mean: {post.mu.round(6).tolist()}, kappa: {post.kappa}")

    print(f"Entropy at kappa=0: {entropy(VmfParams(prior.mu, 0.0)):.6f} "
          f"(log 4pi = {math.log(4 * math.pi):.6f})")

    target = np.array([0.6, 0.0, 0.8])
    analytic = expected_log_likelihood(post, 5.0, target)
    est = mc_expected_loglik(post, 5.0, target, 100_000, RandomStream(0))
    z = z_score(analytic, est)
    print(f"Expected log-likelihood: analytic {analytic:.6f}, "
          f"MC {est.value:.6f} +/- {est.std_error:.6f} (z = {z:.2f})")

    print("=" * 60)
    if z < 3.0:
        print("✅ Closed form agrees with Monte-Carlo.")
    else:
        print("⚠️ Closed form and Monte-Carlo disagree, check the install.")

except Exception as e:
    print(f"❌ Error: {e}")
    print("\nCheck that the dependencies in requirements.txt are installed")

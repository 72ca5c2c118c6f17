#!/usr/bin/env python3
"""
Simple Example - the off-switch game on the risotto data

Fits a posterior to the eight butter preferences, then lets the robot decide
whether to serve 6.5 g (x) immediately, defer to the human, or keep 3.5 g (o).
"""

import sys
from pathlib import Path

# Add src directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from choice_model import Exact, GaussianNoise
from experiments import RISOTTO_KERNEL, risotto_dataset
from game_engine import expected_payoffs
from decision_policy import decide_scalar
from gauss_kernels import ConstantMean
from payoff_engine import CostParams
from posterior_inference import Laplace, MAP, fit, predict_pair

dataset = risotto_dataset(8)
print(f"Fitting the butter posterior from {len(dataset)} preferences...")

for method in (Laplace(), MAP()):
    posterior = fit(dataset, RISOTTO_KERNEL, ConstantMean(), method=method, model=Exact())
    bp = predict_pair(posterior, RISOTTO_KERNEL, ConstantMean(), 6.5, 3.5)
    print(f"\n{method.kind}: nu(x) ~ {bp.mu_x:.3f}, nu(o) ~ {bp.mu_o:.3f}, "
          f"Var(nu(x) - nu(o)) = {bp.diff_variance:.4f}")

    for sender in (Exact(), GaussianNoise(sigma=1.0)):
        payoffs = expected_payoffs(bp, sender, CostParams())
        action = decide_scalar(payoffs)
        print(f"  {sender.kind:>14}: DEF {payoffs.def_value:.3f}  IMM {payoffs.imm_value:.3f}"
              f"  DoN {payoffs.don_value:.3f}  ->  {action.value}")

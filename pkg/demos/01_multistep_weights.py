"""Derivative-approximation weights and their stability screening.

Prints the exact rational weights for each step count and the largest
characteristic root besides 1; watch the root cross the unit circle at k=7.
"""

from fbsde_multistep import approx_derivative, compute_coeffs, stability_report

print("scaled weights alpha_{k,i} * dt and root-condition verdicts\n")
for k in range(1, 9):
    coeffs = compute_coeffs(k)
    report = stability_report(coeffs)
    weights = "  ".join(str(a) for a in coeffs.scaled_alphas)
    verdict = "stable" if report.stable else "UNSTABLE"
    print(f"k={k}:  max|root| = {report.max_abs_nontrivial:.4f}  ({verdict})")
    print(f"      {weights}")

print("\nderivative of exp at 0, k=3, shrinking dt (watch the dt^3 decay):")
import math

coeffs = compute_coeffs(3)
for dt in (0.1, 0.05, 0.025, 0.0125):
    samples = [math.exp(i * dt) for i in range(4)]
    err = abs(approx_derivative(samples, coeffs, dt) - 1.0)
    print(f"  dt = {dt:7.4f}   |error| = {err:.3e}")

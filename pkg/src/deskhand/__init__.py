"""Desk-scale tactile dexterous-hand simulation and imitation-learning stack.

Subsystems:
  kinematics  - 12-DOF five-finger hand model, fingertip frames, Jacobians
  contact     - penetration-based tactile sampling and fingertip force aggregation
  control     - PD law, force-informed targets, chunk interpolation, temporal ensemble
  world       - scene objects, physics stepping, task predicates, rendering
  inpaint     - mask-guided harmonic fill for operator-occluded frames
  demo_io     - versioned binary demonstration container and action-label derivation
  dataset     - (observation window, action chunk) training samples with normalization
  policy      - scripted task oracles and nearest-neighbor chunk policies
  service     - live WebSocket session exposing the simulator to the teach UI
"""

__version__ = "0.1.0"

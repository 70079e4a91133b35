"""Learning model predictive control for a simulated quadrotor.

Iteratively learns minimum-time flight through waypoint corridors: each
completed lap is stored with its cost-to-go, and a receding-horizon SQP
controller uses the convex hull of nearby stored states as terminal set and
their interpolated cost-to-go as terminal cost.
"""

__version__ = "0.1.0"

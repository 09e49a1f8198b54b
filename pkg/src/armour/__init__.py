"""Reachability-based trajectory planning for serial arms with uncertain
inertial parameters, built on polynomial zonotopes and a robust
passivity-based tracking controller."""

__version__ = "0.1.0"

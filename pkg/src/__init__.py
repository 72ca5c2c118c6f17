"""
Off-switch signalling game simulator - GP preference learning, closed-form
payoffs and decision rules for a robot that may defer to a human
"""

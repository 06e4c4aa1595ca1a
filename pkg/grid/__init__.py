# tubegrid/grid/__init__.py
"""Network model, closed-loop dynamics, control design and certification."""

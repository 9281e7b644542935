"""Dual-path self-supervised training with FLOPs-budgeted channel gates."""

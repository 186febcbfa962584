"""Desk-scale gesture-steered object navigation: simulator, training, evaluation."""

"""Tests for stochgrad-lab."""

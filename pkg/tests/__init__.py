"""Tests for psmiss."""

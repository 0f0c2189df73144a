"""Scenario runners, oracles, observation traces and reports."""

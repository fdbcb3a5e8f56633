"""Canonical problem spec fixtures shipped with dptool."""

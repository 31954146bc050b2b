"""Seatbelt detection and usage recognition for in-cabin cameras."""

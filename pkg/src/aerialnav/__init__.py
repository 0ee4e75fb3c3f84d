"""Aerial instruction-following navigation with semantic maps and memory graphs."""

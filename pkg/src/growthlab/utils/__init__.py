"""Small helpers shared across growthlab modules."""

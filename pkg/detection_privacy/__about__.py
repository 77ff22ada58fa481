"""Version for the package - only edit when intending to release."""

version = '0.1.0'

"""
Tests package for covhmm.
"""

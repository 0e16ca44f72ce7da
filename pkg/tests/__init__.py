"""
HOT-Crypto Tests

Run with: pytest tests/
"""

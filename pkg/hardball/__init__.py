"""hardball - Two hard balls in a box/torus: event-driven billiard and sufficiency diagnostics"""

__version__ = '0.1.0'

"""hardball core - Two-ball billiard model, dynamics and analysis"""

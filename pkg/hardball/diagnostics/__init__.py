"""hardball diagnostics - Lyapunov spectra, censuses and ensemble runs"""

"""hardball utils - Configuration and logging helpers"""

"""hardball CLI - Command line interface"""

"""
Utility modules for the LSFA flooding-defense simulator
"""

"""
Dual-modality insider threat detection pipeline.
"""

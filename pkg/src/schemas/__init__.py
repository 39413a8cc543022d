"""
Source mapping documents for log ingestion.
"""

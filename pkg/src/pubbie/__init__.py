"""pubbie: a publication-reporting chat agent.

Ingests publication CSVs, predicts challenge-program affiliations, answers
natural-language inquiries through a staged LLM pipeline with guarded
text-to-SQL over an embedded store, and exports results back to CSV.
"""

__version__ = "0.1.0"

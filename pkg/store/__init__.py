from .storage import ReportStorage

__all__ = ['ReportStorage']

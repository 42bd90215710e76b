from .sbi import SbiClient, UpfUnreachable, collection_request
from .service import ModelBinding, NwdafService, UnsupportedEventId
from .store import ReportStore, StoredUsageReport

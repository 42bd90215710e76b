from .core import AllEventsUnsupported, UnknownSession, UnknownSubscription, Upf, UpfError
from .packets import DOWNLINK, UPLINK, ForwardDecision, MalformedDescriptor, PacketDescriptor, PacketKind, PduSession
from .service import UpfService

"""Event exposure and analytics message model with its JSON codec."""

from .codec import (
    decode_abnormal_notification,
    decode_analytics_subscription,
    decode_notification,
    decode_subscription_request,
    decode_subscription_response,
    encode_abnormal_notification,
    encode_analytics_subscription,
    encode_notification,
    encode_subscription_request,
    encode_subscription_response,
    format_timestamp,
    parse_timestamp,
)
from .model import *  # noqa: F401,F403

from .service import (
    BindingState,
    NwdafUnreachable,
    Smf,
    SmfService,
    UeSessionBinding,
    UpfReleaseFailed,
    http_release,
    release_all,
)

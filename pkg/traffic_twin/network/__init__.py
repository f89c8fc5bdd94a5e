from .network import (
    DEADEND_POLICIES,
    Link,
    LinkKind,
    Network,
    Node,
    attach_virtual_links,
    load_network,
    save_network,
)
from .params import (
    BEHAVIORAL_KINDS,
    PARAMETER_KINDS,
    LinkParams,
    ParameterRanges,
    normalize_beta,
    sample_parameters,
)
from .tntp import MILE, parse_tntp, read_tntp, serialize_tntp

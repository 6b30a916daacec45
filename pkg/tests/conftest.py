import pytest

SMALL_CONFIG = """
[run]
study_start = 2020-09-10T07:00:00Z
study_end = 2020-09-13T07:00:00Z
utc_offset_hours = -7
calibration_node = B:outdoor
wilcoxon_during = 2020-09-10T07:00:00Z/2020-09-12T07:00:00Z
wilcoxon_post = 2020-09-12T07:00:00Z/2020-09-13T07:00:00Z
personal_node = P1
home_site = A

[site A]
hepa = yes
penetration = 0.8
air_exchange = 0.5
k_extra = 1.5

[site B]
hepa = no
penetration = 0.9
air_exchange = 0.8
k_extra = 0.1
cooking = 18:30/100

[site C]
hepa = no
outdoor_node = B:outdoor
penetration = 1.0
air_exchange = 1.0
k_extra = 0.2

[geofence home]
lat = 47.6615
lon = -122.3130

[geofence office]
lat = 47.6553
lon = -122.3035

[scenario]
seed = 11
outdoor_profile = 0:80, 24:160, 48:120, 72:30
outdoor_variability = 0.1
sensor_gain = 1.4
sensor_offset = 1
sensor_noise = 3
reference_noise = 2
gps_dropout = 0.1

[personal]
schedule = 00:00-09:00 home, 09:00-17:00 office, 17:00-18:00 other, 18:00-24:00 home
source.home = A
source.office = B * 1.0
source.other = outdoor * 0.9
"""


@pytest.fixture
def small_config(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL_CONFIG)
    return p

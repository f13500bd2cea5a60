#include <cstdio>
int main(){ printf("acceptance: pending\n"); return 1; }
